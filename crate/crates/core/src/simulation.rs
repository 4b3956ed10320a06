//! Driver paths, SDE integration under a control, Monte-Carlo estimates and
//! the scalar Riccati benchmark.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ControlTensor, CostSpec, LqModel, Matrix, ModelError};
use crate::par::{chunked_fold, Workers};
use crate::signature::{MomentAccumulator, SampledPath, SignatureError, SignatureState};
use crate::tensor::TruncatedTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("Hurst index must lie in (0, 1), got {0}")]
    InvalidHurst(f64),
    #[error("invalid driver configuration: {0}")]
    InvalidDriver(String),
    #[error("fBm covariance factorization failed for {steps} steps")]
    Embedding { steps: usize },
    #[error("{flagged} of {total} paths produced non-finite states")]
    TooManyFlagged { flagged: usize, total: usize },
    #[error("at least two paths are required, got {0}")]
    TooFewPaths(usize),
    #[error("path grid does not match the model horizon {horizon} (path ends at {end})")]
    HorizonMismatch { horizon: f64, end: f64 },
    #[error("Riccati benchmark needs N = K = D = 1")]
    NotScalar,
    #[error("B(t) = {value} is not positive at t = {t}")]
    NonPositiveControlCost { t: f64, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
}

/// Largest fraction of non-finite paths tolerated before an estimate aborts.
pub const MAX_FLAGGED_FRACTION: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    Brownian,
    Fbm,
}

fn default_hurst() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverConfig {
    pub kind: DriverKind,
    #[serde(default = "default_hurst")]
    pub hurst: f64,
    pub noise_dim: usize,
    pub steps: usize,
    pub horizon: f64,
    pub seed: u64,
}

impl DriverConfig {
    pub fn brownian(noise_dim: usize, steps: usize, horizon: f64, seed: u64) -> Self {
        DriverConfig {
            kind: DriverKind::Brownian,
            hurst: 0.5,
            noise_dim,
            steps,
            horizon,
            seed,
        }
    }

    pub fn fbm(hurst: f64, noise_dim: usize, steps: usize, horizon: f64, seed: u64) -> Self {
        DriverConfig {
            kind: DriverKind::Fbm,
            hurst,
            noise_dim,
            steps,
            horizon,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.steps < 1 {
            return Err(SimError::InvalidDriver("steps must be at least 1".into()));
        }
        if self.noise_dim < 1 {
            return Err(SimError::InvalidDriver(
                "noise_dim must be at least 1".into(),
            ));
        }
        if !(self.horizon > 0.0) {
            return Err(SimError::InvalidDriver(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(SimError::InvalidHurst(self.hurst));
        }
        Ok(())
    }

    /// Same law, independent stream family.
    pub fn reseeded(&self, salt: u64) -> Self {
        DriverConfig {
            seed: splitmix64(self.seed ^ splitmix64(salt)),
            ..self.clone()
        }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone)]
enum FbmFactor {
    /// sqrt(λ_k / 2n) for the circulant embedding of size 2n.
    Circulant {
        sqrt_eig: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    /// Lower Cholesky factor of the fGn covariance.
    Cholesky(DMatrix<f64>),
}

impl std::fmt::Debug for FbmFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FbmFactor::Circulant { sqrt_eig, .. } => write!(f, "Circulant({})", sqrt_eig.len()),
            FbmFactor::Cholesky(m) => write!(f, "Cholesky({})", m.nrows()),
        }
    }
}

/// Reproducible path source: path `i` is drawn from ChaCha stream `i` of
/// the configured seed, so it does not depend on which worker draws it.
#[derive(Clone, Debug)]
pub struct PathGenerator {
    cfg: DriverConfig,
    fbm: Option<FbmFactor>,
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
fn fgn_autocov(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

impl PathGenerator {
    pub fn new(cfg: &DriverConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let fbm = match cfg.kind {
            DriverKind::Brownian => None,
            DriverKind::Fbm => Some(Self::circulant(cfg).map_or_else(|| Self::cholesky(cfg), Ok)?),
        };
        Ok(PathGenerator {
            cfg: cfg.clone(),
            fbm,
        })
    }

    /// Forces the Cholesky factorization (used to cross-check the embedding).
    pub fn new_cholesky(cfg: &DriverConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        Ok(PathGenerator {
            cfg: cfg.clone(),
            fbm: Some(Self::cholesky(cfg)?),
        })
    }

    pub fn uses_circulant(&self) -> bool {
        matches!(self.fbm, Some(FbmFactor::Circulant { .. }))
    }

    fn circulant(cfg: &DriverConfig) -> Option<FbmFactor> {
        let n = cfg.steps;
        let m = 2 * n;
        let mut row: Vec<Complex<f64>> = (0..m)
            .map(|j| {
                let lag = if j <= n { j } else { m - j };
                Complex::new(fgn_autocov(cfg.hurst, lag), 0.0)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut row);
        let max = row.iter().fold(0.0f64, |a, c| a.max(c.re.abs()));
        if row.iter().any(|c| c.re < -1e-10 * max) {
            return None;
        }
        let sqrt_eig = row
            .iter()
            .map(|c| (c.re.max(0.0) / m as f64).sqrt())
            .collect();
        Some(FbmFactor::Circulant { sqrt_eig, fft })
    }

    fn cholesky(cfg: &DriverConfig) -> Result<FbmFactor, SimError> {
        let n = cfg.steps;
        let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocov(cfg.hurst, i.abs_diff(j)));
        cov.cholesky()
            .map(|c| FbmFactor::Cholesky(c.l()))
            .ok_or(SimError::Embedding { steps: n })
    }

    pub fn config(&self) -> &DriverConfig {
        &self.cfg
    }

    /// Writes the `steps × D` increments of path `index` (row-major).
    pub fn increments(&self, index: u64, out: &mut [f64]) {
        let (n, dim) = (self.cfg.steps, self.cfg.noise_dim);
        debug_assert_eq!(out.len(), n * dim);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index);
        match &self.fbm {
            None => {
                let sd = self.cfg.dt().sqrt();
                for x in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = sd * z;
                }
            }
            Some(factor) => {
                let scale = self.cfg.dt().powf(self.cfg.hurst);
                for d in 0..dim {
                    let noise = fgn_sample(factor, n, &mut rng);
                    for (k, v) in noise.into_iter().enumerate() {
                        out[k * dim + d] = scale * v;
                    }
                }
            }
        }
    }

    pub fn path(&self, index: u64) -> SampledPath {
        let mut inc = vec![0.0; self.cfg.steps * self.cfg.noise_dim];
        self.increments(index, &mut inc);
        SampledPath::from_increments(self.cfg.horizon, &inc, self.cfg.noise_dim)
            .expect("uniform grid is strictly increasing")
    }
}

fn fgn_sample(factor: &FbmFactor, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match factor {
        FbmFactor::Circulant { sqrt_eig, fft } => {
            let mut buf: Vec<Complex<f64>> = sqrt_eig
                .iter()
                .map(|&s| {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    Complex::new(s * re, s * im)
                })
                .collect();
            fft.process(&mut buf);
            buf[..n].iter().map(|c| c.re).collect()
        }
        FbmFactor::Cholesky(l) => {
            let z = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
            (l * z).iter().copied().collect()
        }
    }
}

/// `n` independent paths from `cfg`.
pub fn generate_paths(cfg: &DriverConfig, n: usize) -> Result<Vec<SampledPath>, SimError> {
    let generator = PathGenerator::new(cfg)?;
    Ok((0..n as u64).map(|i| generator.path(i)).collect())
}

/// Indexed collection of driver paths sharing one time grid.
pub trait PathSet: Sync {
    fn len(&self) -> usize;
    fn path(&self, index: usize) -> SampledPath;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PathSet for [SampledPath] {
    fn len(&self) -> usize {
        <[SampledPath]>::len(self)
    }

    fn path(&self, index: usize) -> SampledPath {
        self[index].clone()
    }
}

impl PathSet for Vec<SampledPath> {
    fn len(&self) -> usize {
        <[SampledPath]>::len(self)
    }

    fn path(&self, index: usize) -> SampledPath {
        self[index].clone()
    }
}

/// The first `count` paths of a generator, produced on demand.
pub struct GeneratedPaths<'a> {
    pub generator: &'a PathGenerator,
    pub count: usize,
}

impl PathSet for GeneratedPaths<'_> {
    fn len(&self) -> usize {
        self.count
    }

    fn path(&self, index: usize) -> SampledPath {
        self.generator.path(index as u64)
    }
}

/// Monte-Carlo expected signature of generated paths, streamed so no path
/// is kept after its signature has been accumulated.
pub fn expected_signature_mc(
    generator: &PathGenerator,
    n_paths: usize,
    level: usize,
    workers: Workers,
) -> Result<(TruncatedTensor, TruncatedTensor), SimError> {
    if n_paths < 2 {
        return Err(SimError::TooFewPaths(n_paths));
    }
    let cfg = generator.config();
    let alphabet = cfg.noise_dim + 1;
    let len = crate::tensor::word_count(alphabet, level);
    let dt = cfg.dt();
    let acc = chunked_fold(
        n_paths,
        workers,
        || MomentAccumulator::new(len),
        |acc, i| {
            let mut inc = vec![0.0; cfg.steps * cfg.noise_dim];
            generator.increments(i as u64, &mut inc);
            let mut sig = SignatureState::new(cfg.noise_dim, level);
            for dw in inc.chunks(cfg.noise_dim) {
                sig.step(dt, dw).expect("positive step");
            }
            acc.push(sig.tensor().coeffs());
        },
        MomentAccumulator::merge,
    );
    Ok(crate::signature::moments_to_tensors(&acc, alphabet, level))
}

/// Drift of the Itô form of the Stratonovich dynamics:
/// `b0 + ½ Σ_d σ2_d σ0_d` and `b2 + ½ Σ_d σ2_d σ2_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoDrift {
    pub b0: Vec<f64>,
    pub b2: Matrix,
}

pub fn strat_to_ito_drift(model: &LqModel) -> ItoDrift {
    let (n_dim, d_dim) = (model.state_dim, model.noise_dim);
    let mut b0 = model.b0.clone();
    let mut b2 = model.b2.clone();
    for n in 0..n_dim {
        for d in 0..d_dim {
            for m in 0..n_dim {
                let s = model.sigma2[n][d][m];
                if s == 0.0 {
                    continue;
                }
                b0[n] += 0.5 * s * model.sigma0[m][d];
                for l in 0..n_dim {
                    b2[n][l] += 0.5 * s * model.sigma2[m][d][l];
                }
            }
        }
    }
    ItoDrift { b0, b2 }
}

/// Time stepping for the controlled state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Euler–Maruyama on the Itô-corrected drift (Brownian drivers).
    ItoEuler,
    /// Exact flow of the linear ODE along each linear segment of the driver
    /// (Wong–Zakai); valid for any continuous driver, including fBm.
    SegmentFlow,
}

impl Scheme {
    pub fn for_driver(kind: DriverKind) -> Self {
        match kind {
            DriverKind::Brownian => Scheme::ItoEuler,
            DriverKind::Fbm => Scheme::SegmentFlow,
        }
    }
}

/// A non-anticipative control evaluated at grid points.
pub trait Control: Sync {
    fn dim(&self) -> usize;

    /// Signature level this control reads; 0 when it ignores the signature.
    fn signature_level(&self) -> usize {
        0
    }

    /// `u(t)` from the signature of the driver on `[0, t]` and the state `X_t`.
    fn evaluate(&self, t: f64, signature: &SignatureState, state: &[f64], out: &mut [f64]);
}

/// `u^k_t = ⟨u^(k), Ŵ_t⟩`.
#[derive(Clone, Debug)]
pub struct SignatureControl(pub ControlTensor);

impl Control for SignatureControl {
    fn dim(&self) -> usize {
        self.0.coords.len()
    }

    fn signature_level(&self) -> usize {
        self.0.level()
    }

    fn evaluate(&self, _t: f64, signature: &SignatureState, _state: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.0.coords) {
            *o = signature.pair(c);
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConstantControl(pub Vec<f64>);

impl Control for ConstantControl {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn evaluate(&self, _t: f64, _signature: &SignatureState, _state: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// State and control values on the grid of one path.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `(steps + 1) × N`, row-major.
    pub states: Vec<f64>,
    /// `(steps + 1) × K`, row-major.
    pub controls: Vec<f64>,
    pub flagged: bool,
}

impl Trajectory {
    pub fn state(&self, i: usize) -> &[f64] {
        let n = self.states.len() / self.times.len();
        &self.states[i * n..(i + 1) * n]
    }

    pub fn control(&self, i: usize) -> &[f64] {
        let k = self.controls.len() / self.times.len();
        &self.controls[i * k..(i + 1) * k]
    }
}

/// Integrates the controlled state along `path`. At each grid point the
/// signature covers the path up to that time only, the control is read,
/// and then the state and signature advance by one segment.
pub fn simulate_state(
    model: &LqModel,
    control: &dyn Control,
    path: &SampledPath,
    scheme: Scheme,
) -> Result<Trajectory, SimError> {
    if (path.horizon() - model.horizon).abs() > 1e-9 * model.horizon {
        return Err(SimError::HorizonMismatch {
            horizon: model.horizon,
            end: path.horizon(),
        });
    }
    if path.dim() != model.noise_dim {
        return Err(SignatureError::DimensionMismatch {
            expected: model.noise_dim,
            got: path.dim(),
        }
        .into());
    }
    Ok(Integrator::new(model, scheme).run(control, path))
}

struct Integrator<'a> {
    model: &'a LqModel,
    scheme: Scheme,
    ito: ItoDrift,
}

impl<'a> Integrator<'a> {
    fn new(model: &'a LqModel, scheme: Scheme) -> Self {
        Integrator {
            model,
            scheme,
            ito: strat_to_ito_drift(model),
        }
    }

    fn run(&self, control: &dyn Control, path: &SampledPath) -> Trajectory {
        let m = self.model;
        let (n_dim, k_dim, d_dim) = (m.state_dim, m.control_dim, m.noise_dim);
        let steps = path.len() - 1;
        let mut sig = SignatureState::new(d_dim, control.signature_level());
        let mut states = Vec::with_capacity((steps + 1) * n_dim);
        let mut controls = vec![0.0; (steps + 1) * k_dim];
        let mut x = m.x0.clone();
        let mut next = vec![0.0; n_dim];
        let mut dw = vec![0.0; d_dim];
        let mut flagged = false;
        for i in 0..=steps {
            let t = path.times()[i];
            states.extend_from_slice(&x);
            let u = &mut controls[i * k_dim..(i + 1) * k_dim];
            control.evaluate(t, &sig, &x, u);
            if i == steps {
                break;
            }
            let dt = path.increment(i, &mut dw);
            match self.scheme {
                Scheme::ItoEuler => self.euler_step(&x, u, dt, &dw, &mut next),
                Scheme::SegmentFlow => self.flow_step(&x, u, dt, &dw, &mut next),
            }
            std::mem::swap(&mut x, &mut next);
            if x.iter().any(|v| !v.is_finite()) {
                flagged = true;
            }
            sig.step(dt, &dw).expect("grid validated");
        }
        Trajectory {
            times: path.times().to_vec(),
            states,
            controls,
            flagged,
        }
    }

    fn euler_step(&self, x: &[f64], u: &[f64], dt: f64, dw: &[f64], out: &mut [f64]) {
        let m = self.model;
        for n in 0..m.state_dim {
            let mut drift = self.ito.b0[n];
            for (k, uk) in u.iter().enumerate() {
                drift += m.b1[n][k] * uk;
            }
            for (l, xl) in x.iter().enumerate() {
                drift += self.ito.b2[n][l] * xl;
            }
            let mut noise = 0.0;
            for (d, w) in dw.iter().enumerate() {
                let mut vol = m.sigma0[n][d];
                for (l, xl) in x.iter().enumerate() {
                    vol += m.sigma2[n][d][l] * xl;
                }
                noise += vol * w;
            }
            out[n] = x[n] + drift * dt + noise;
        }
    }

    /// Along a linear segment the dynamics are the ODE `X' = α + βX` with
    /// `α = b0 + b1 u + σ0 ΔW/Δt`, `β = b2 + Σ_d σ2_d ΔW_d/Δt`.
    fn flow_step(&self, x: &[f64], u: &[f64], dt: f64, dw: &[f64], out: &mut [f64]) {
        let m = self.model;
        let n_dim = m.state_dim;
        let mut alpha = vec![0.0; n_dim];
        let mut beta = vec![vec![0.0; n_dim]; n_dim];
        for n in 0..n_dim {
            alpha[n] = m.b0[n] * dt;
            for (k, uk) in u.iter().enumerate() {
                alpha[n] += m.b1[n][k] * uk * dt;
            }
            for (d, w) in dw.iter().enumerate() {
                alpha[n] += m.sigma0[n][d] * w;
            }
            for l in 0..n_dim {
                beta[n][l] = m.b2[n][l] * dt;
                for (d, w) in dw.iter().enumerate() {
                    beta[n][l] += m.sigma2[n][d][l] * w;
                }
            }
        }
        if n_dim == 1 {
            let (a, b) = (alpha[0], beta[0][0]);
            // x e^b + a (e^b - 1)/b
            let phi = if b.abs() < 1e-12 {
                1.0 + 0.5 * b
            } else {
                b.exp_m1() / b
            };
            out[0] = x[0] * b.exp() + a * phi;
            return;
        }
        let mut aug = DMatrix::zeros(n_dim + 1, n_dim + 1);
        for n in 0..n_dim {
            for l in 0..n_dim {
                aug[(n, l)] = beta[n][l];
            }
            aug[(n, n_dim)] = alpha[n];
        }
        let flow = aug.exp();
        for n in 0..n_dim {
            let mut v = flow[(n, n_dim)];
            for (l, xl) in x.iter().enumerate() {
                v += flow[(n, l)] * xl;
            }
            out[n] = v;
        }
    }
}

/// Cost coefficients tabulated on a time grid.
struct CostGrid {
    n: usize,
    k: usize,
    a: Vec<Matrix>,
    b: Vec<Matrix>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    e: Matrix,
    g: Vec<f64>,
}

impl CostGrid {
    fn new(cost: &CostSpec, model: &LqModel, times: &[f64]) -> Result<Self, SimError> {
        let cost = cost.normalized(model.state_dim, model.control_dim)?;
        Ok(CostGrid {
            n: model.state_dim,
            k: model.control_dim,
            a: times.iter().map(|&t| cost.a_at(t)).collect(),
            b: times.iter().map(|&t| cost.b_at(t)).collect(),
            c: times.iter().map(|&t| cost.c_at(t)).collect(),
            d: times.iter().map(|&t| cost.d_at(t)).collect(),
            e: cost.e.clone(),
            g: cost.g.clone(),
        })
    }

    fn running(&self, i: usize, x: &[f64], u: &[f64]) -> f64 {
        let mut v = 0.0;
        for n in 0..self.n {
            for l in 0..self.n {
                v += x[n] * self.a[i][n][l] * x[l];
            }
            v += 2.0 * self.c[i][n] * x[n];
        }
        for k in 0..self.k {
            for l in 0..self.k {
                v += u[k] * self.b[i][k][l] * u[l];
            }
            v += 2.0 * self.d[i][k] * u[k];
        }
        v
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for n in 0..self.n {
            for l in 0..self.n {
                v += x[n] * self.e[n][l] * x[l];
            }
            v += 2.0 * self.g[n] * x[n];
        }
        v
    }

    /// Trapezoidal running cost plus terminal cost of one trajectory.
    fn path_cost(&self, traj: &Trajectory) -> f64 {
        let steps = traj.times.len() - 1;
        let mut total = 0.0;
        let mut prev = self.running(0, traj.state(0), traj.control(0));
        for i in 1..=steps {
            let cur = self.running(i, traj.state(i), traj.control(i));
            total += 0.5 * (prev + cur) * (traj.times[i] - traj.times[i - 1]);
            prev = cur;
        }
        total + self.terminal(traj.state(steps))
    }
}

/// Trapezoidal `∫ |u_a - u_b|² dt` over the grid.
fn control_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let sq = |i: usize| -> f64 {
        a.control(i)
            .iter()
            .zip(b.control(i))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    let steps = a.times.len() - 1;
    let mut total = 0.0;
    let mut prev = sq(0);
    for i in 1..=steps {
        let cur = sq(i);
        total += 0.5 * (prev + cur) * (a.times[i] - a.times[i - 1]);
        prev = cur;
    }
    total
}

/// Monte-Carlo mean with standard error and a 95% interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub ci95: (f64, f64),
    /// Paths excluded for producing non-finite states.
    pub flagged: usize,
}

impl McEstimate {
    fn from_moments(acc: &MomentAccumulator, flagged: usize) -> Self {
        let mean = acc.mean().first().copied().unwrap_or(0.0);
        let stderr = acc.stderr().first().copied().unwrap_or(0.0);
        McEstimate {
            mean,
            stderr,
            n_paths: acc.count(),
            ci95: (mean - 1.96 * stderr, mean + 1.96 * stderr),
            flagged,
        }
    }
}

/// Running mean/variance of per-path values plus a flagged-path count.
#[derive(Clone, Debug)]
struct PathStats {
    moments: MomentAccumulator,
    flagged: usize,
}

impl PathStats {
    fn new(len: usize) -> Self {
        PathStats {
            moments: MomentAccumulator::new(len),
            flagged: 0,
        }
    }

    fn merge(&mut self, other: PathStats) {
        self.moments.merge(other.moments);
        self.flagged += other.flagged;
    }

    fn check(&self, total: usize) -> Result<(), SimError> {
        if self.moments.count() == 0 || self.flagged as f64 > MAX_FLAGGED_FRACTION * total as f64 {
            return Err(SimError::TooManyFlagged {
                flagged: self.flagged,
                total,
            });
        }
        Ok(())
    }

    fn estimate(&self, i: usize) -> McEstimate {
        let mean = self.moments.mean()[i];
        let stderr = self.moments.stderr()[i];
        McEstimate {
            mean,
            stderr,
            n_paths: self.moments.count(),
            ci95: (mean - 1.96 * stderr, mean + 1.96 * stderr),
            flagged: self.flagged,
        }
    }
}

fn grid_of(paths: &dyn PathSet) -> Result<Vec<f64>, SimError> {
    if paths.len() < 2 {
        return Err(SimError::TooFewPaths(paths.len()));
    }
    Ok(paths.path(0).times().to_vec())
}

/// Monte-Carlo cost of `control`.
pub fn estimate_cost(
    model: &LqModel,
    cost: &CostSpec,
    control: &dyn Control,
    paths: &dyn PathSet,
    scheme: Scheme,
    workers: Workers,
) -> Result<McEstimate, SimError> {
    let times = grid_of(paths)?;
    let grid = CostGrid::new(cost, model, &times)?;
    let integrator = Integrator::new(model, scheme);
    simulate_state(model, control, &paths.path(0), scheme)?;
    let stats = chunked_fold(
        paths.len(),
        workers,
        || PathStats::new(1),
        |acc, i| {
            let traj = integrator.run(control, &paths.path(i));
            let c = grid.path_cost(&traj);
            if traj.flagged || !c.is_finite() {
                acc.flagged += 1;
            } else {
                acc.moments.push(&[c]);
            }
        },
        PathStats::merge,
    );
    stats.check(paths.len())?;
    Ok(McEstimate::from_moments(&stats.moments, stats.flagged))
}

/// Monte-Carlo `E ∫ |u_a - u_b|² dt`, each control driving its own state on
/// the same noise.
pub fn estimate_control_distance(
    control_a: &dyn Control,
    control_b: &dyn Control,
    model: &LqModel,
    paths: &dyn PathSet,
    scheme: Scheme,
    workers: Workers,
) -> Result<McEstimate, SimError> {
    grid_of(paths)?;
    let integrator = Integrator::new(model, scheme);
    simulate_state(model, control_a, &paths.path(0), scheme)?;
    let stats = chunked_fold(
        paths.len(),
        workers,
        || PathStats::new(1),
        |acc, i| {
            let path = paths.path(i);
            let a = integrator.run(control_a, &path);
            let b = integrator.run(control_b, &path);
            let dist = control_distance(&a, &b);
            if a.flagged || b.flagged || !dist.is_finite() {
                acc.flagged += 1;
            } else {
                acc.moments.push(&[dist]);
            }
        },
        PathStats::merge,
    );
    stats.check(paths.len())?;
    Ok(McEstimate::from_moments(&stats.moments, stats.flagged))
}

/// Cost of `control`, and optionally the cost of `reference` and the
/// control distance between the two, from one pass over common paths.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonEstimate {
    pub cost: McEstimate,
    pub reference_cost: Option<McEstimate>,
    pub distance: Option<McEstimate>,
}

pub fn estimate_against_reference(
    model: &LqModel,
    cost: &CostSpec,
    control: &dyn Control,
    reference: Option<&dyn Control>,
    paths: &dyn PathSet,
    scheme: Scheme,
    workers: Workers,
) -> Result<ComparisonEstimate, SimError> {
    let times = grid_of(paths)?;
    let grid = CostGrid::new(cost, model, &times)?;
    let integrator = Integrator::new(model, scheme);
    simulate_state(model, control, &paths.path(0), scheme)?;
    let stats = chunked_fold(
        paths.len(),
        workers,
        || PathStats::new(3),
        |acc, i| {
            let path = paths.path(i);
            let a = integrator.run(control, &path);
            let ca = grid.path_cost(&a);
            let (cb, dist, bad_b) = match reference {
                Some(r) => {
                    let b = integrator.run(r, &path);
                    (grid.path_cost(&b), control_distance(&a, &b), b.flagged)
                }
                None => (0.0, 0.0, false),
            };
            if a.flagged || bad_b || !(ca.is_finite() && cb.is_finite() && dist.is_finite()) {
                acc.flagged += 1;
            } else {
                acc.moments.push(&[ca, cb, dist]);
            }
        },
        PathStats::merge,
    );
    stats.check(paths.len())?;
    Ok(ComparisonEstimate {
        cost: stats.estimate(0),
        reference_cost: reference.map(|_| stats.estimate(1)),
        distance: reference.map(|_| stats.estimate(2)),
    })
}

/// Value function `V(t, x) = P x² + 2ψ x + χ` of the scalar problem on a
/// uniform grid, with the optimal feedback `u*(t, x) = -(b1 (P x + ψ) + D(t)) / B(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution {
    pub grid: Vec<f64>,
    pub p: Vec<f64>,
    pub psi: Vec<f64>,
    pub chi: Vec<f64>,
    b1: f64,
    cost: CostSpec,
}

impl RiccatiSolution {
    fn interp(&self, values: &[f64], t: f64) -> f64 {
        let n = self.grid.len() - 1;
        let h = self.grid[n] / n as f64;
        let pos = (t / h).clamp(0.0, n as f64);
        let i = (pos.floor() as usize).min(n - 1);
        let w = pos - i as f64;
        if w == 0.0 {
            return values[i];
        }
        values[i] * (1.0 - w) + values[i + 1] * w
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.interp(&self.p, t) * x * x
            + 2.0 * self.interp(&self.psi, t) * x
            + self.interp(&self.chi, t)
    }

    pub fn feedback(&self, t: f64, x: f64) -> f64 {
        let p = self.interp(&self.p, t);
        let psi = self.interp(&self.psi, t);
        -(self.b1 * (p * x + psi) + self.cost.d_at(t)[0]) / self.cost.b_at(t)[0][0]
    }
}

impl Control for RiccatiSolution {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, t: f64, _signature: &SignatureState, state: &[f64], out: &mut [f64]) {
        out[0] = self.feedback(t, state[0]);
    }
}

/// Backward RK4 for the scalar Riccati system of the Itô-form HJB equation:
///
/// ```text
/// P' = -A - (2c + σ2²) P + b1² P² / B
/// ψ' = -C - (a + σ0 σ2) P - c ψ + b1 P (D + b1 ψ) / B
/// χ' = -2 a ψ - σ0² P + (D + b1 ψ)² / B
/// ```
///
/// with `a`, `c` the Itô drift constants and `P(T) = E`, `ψ(T) = G`, `χ(T) = 0`.
pub fn riccati_solve(
    model: &LqModel,
    cost: &CostSpec,
    grid_steps: usize,
) -> Result<RiccatiSolution, SimError> {
    model.validate()?;
    if model.state_dim != 1 || model.control_dim != 1 || model.noise_dim != 1 {
        return Err(SimError::NotScalar);
    }
    let cost = cost.normalized(1, 1)?;
    let ito = strat_to_ito_drift(model);
    let (a, c) = (ito.b0[0], ito.b2[0][0]);
    let (b1, s0, s2) = (model.b1[0][0], model.sigma0[0][0], model.sigma2[0][0][0]);
    let horizon = model.horizon;
    let grid: Vec<f64> = (0..=grid_steps)
        .map(|i| horizon * i as f64 / grid_steps as f64)
        .collect();
    for &t in &grid {
        let b = cost.b_at(t)[0][0];
        if !(b > 0.0) {
            return Err(SimError::NonPositiveControlCost { t, value: b });
        }
    }
    let rhs = |t: f64, y: [f64; 3]| -> [f64; 3] {
        let (p, psi) = (y[0], y[1]);
        let aa = cost.a_at(t)[0][0];
        let bb = cost.b_at(t)[0][0];
        let cc = cost.c_at(t)[0];
        let dd = cost.d_at(t)[0];
        let lin = dd + b1 * psi;
        [
            -aa - (2.0 * c + s2 * s2) * p + b1 * b1 * p * p / bb,
            -cc - (a + s0 * s2) * p - c * psi + b1 * p * lin / bb,
            -2.0 * a * psi - s0 * s0 * p + lin * lin / bb,
        ]
    };
    let mut y = [cost.e[0][0], cost.g[0], 0.0];
    let mut p = vec![0.0; grid_steps + 1];
    let mut psi = vec![0.0; grid_steps + 1];
    let mut chi = vec![0.0; grid_steps + 1];
    let store = |i: usize, y: &[f64; 3], p: &mut [f64], psi: &mut [f64], chi: &mut [f64]| {
        p[i] = y[0];
        psi[i] = y[1];
        chi[i] = y[2];
    };
    store(grid_steps, &y, &mut p, &mut psi, &mut chi);
    let h = -horizon / grid_steps as f64;
    let axpy =
        |y: &[f64; 3], k: &[f64; 3], s: f64| [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2]];
    for i in (0..grid_steps).rev() {
        let t = grid[i + 1];
        let k1 = rhs(t, y);
        let k2 = rhs(t + 0.5 * h, axpy(&y, &k1, 0.5 * h));
        let k3 = rhs(t + 0.5 * h, axpy(&y, &k2, 0.5 * h));
        let k4 = rhs(t + h, axpy(&y, &k3, h));
        for j in 0..3 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        store(i, &y, &mut p, &mut psi, &mut chi);
    }
    Ok(RiccatiSolution {
        grid,
        p,
        psi,
        chi,
        b1,
        cost,
    })
}
