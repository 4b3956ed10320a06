//! Linear-quadratic stochastic control with signature controls.
//!
//! Controls are linear functionals of the truncated time-augmented signature
//! of the driving noise. For such controls the state is again a linear
//! functional of the signature, and the expected quadratic cost becomes a
//! deterministic quadratic polynomial in the control coefficients, obtained
//! by pairing a cost tensor with the expected signature.

// `!(x > 0.0)` deliberately rejects NaN; indexed loops mirror the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod experiment;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod signature;
pub mod simulation;
pub mod tensor;

pub use experiment::{ExperimentConfig, RunError, RunRow};
pub use model::{ControlTensor, CostEvaluator, CostSpec, LqModel, StateTensor};
pub use optimizer::{ControlBasis, QuadraticForm};
pub use par::Workers;
pub use signature::{SampledPath, SignatureState};
pub use simulation::{DriverConfig, DriverKind, McEstimate, PathGenerator, Scheme};
pub use tensor::{TruncatedTensor, Word};
