//! Linear-quadratic problem data and its tensor representation.
//!
//! Dynamics (Stratonovich):
//!
//! ```text
//! dX^n = [b0^n + Σ_k b1^{nk} u^k + Σ_n' b2^{nn'} X^n'] dt
//!        + Σ_d [σ0^{nd} + Σ_n' σ2^{ndn'} X^n'] ∘ dW^d
//! ```
//!
//! For a signature control `u^k = ⟨u^(k), Ŵ⟩` the state is `X^n = ⟨x^(n), Ŵ⟩`
//! where `x` is the unique solution of `x^(n) = p^(n) + Σ_n' x^(n') ⊗ q^(nn')`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{TensorError, TruncatedTensor, Word};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {field}: expected {expected}, got {got}")]
    Dimension {
        field: String,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("{what} not positive definite at t = {t}: min eigenvalue {min_eigenvalue}")]
    NotPositiveDefinite {
        what: String,
        t: f64,
        min_eigenvalue: f64,
    },
    #[error("{what} not positive semi-definite at t = {t}: min eigenvalue {min_eigenvalue}")]
    NotPositiveSemiDefinite {
        what: String,
        t: f64,
        min_eigenvalue: f64,
    },
    #[error("{0} must be symmetric")]
    NotSymmetric(String),
    #[error("q^({n},{m}) has a nonzero empty-word coefficient")]
    QHasUnitCoefficient { n: usize, m: usize },
    #[error("expected-signature level {have} is below cost-tensor level {need}")]
    InsufficientLevel { have: usize, need: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Constant-coefficient controlled linear SDE on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqModel {
    pub state_dim: usize,
    pub control_dim: usize,
    pub noise_dim: usize,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub b0: Vec<f64>,
    /// N × K
    pub b1: Matrix,
    /// N × N
    pub b2: Matrix,
    /// N × D
    pub sigma0: Matrix,
    /// N × D × N, indexed `sigma2[n][d][n']`
    pub sigma2: Vec<Matrix>,
}

impl LqModel {
    /// Model with every coefficient zero.
    pub fn zeros(n: usize, k: usize, d: usize, horizon: f64) -> Self {
        LqModel {
            state_dim: n,
            control_dim: k,
            noise_dim: d,
            horizon,
            x0: vec![0.0; n],
            b0: vec![0.0; n],
            b1: vec![vec![0.0; k]; n],
            b2: vec![vec![0.0; n]; n],
            sigma0: vec![vec![0.0; d]; n],
            sigma2: vec![vec![vec![0.0; n]; d]; n],
        }
    }

    /// One-dimensional model (N = K = D = 1).
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        x0: f64,
        b0: f64,
        b1: f64,
        b2: f64,
        sigma0: f64,
        sigma2: f64,
        horizon: f64,
    ) -> Self {
        LqModel {
            state_dim: 1,
            control_dim: 1,
            noise_dim: 1,
            horizon,
            x0: vec![x0],
            b0: vec![b0],
            b1: vec![vec![b1]],
            b2: vec![vec![b2]],
            sigma0: vec![vec![sigma0]],
            sigma2: vec![vec![vec![sigma2]]],
        }
    }

    pub fn alphabet(&self) -> usize {
        self.noise_dim + 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (n, k, d) = (self.state_dim, self.control_dim, self.noise_dim);
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(ModelError::Horizon(self.horizon));
        }
        if d + 1 > crate::tensor::MAX_ALPHABET {
            return Err(dim_err("noise_dim", "<= 8", d));
        }
        check_vec("x0", &self.x0, n)?;
        check_vec("b0", &self.b0, n)?;
        check_mat("b1", &self.b1, n, k)?;
        check_mat("b2", &self.b2, n, n)?;
        check_mat("sigma0", &self.sigma0, n, d)?;
        if self.sigma2.len() != n {
            return Err(dim_err("sigma2", n, self.sigma2.len()));
        }
        for (i, s) in self.sigma2.iter().enumerate() {
            check_mat(&format!("sigma2[{i}]"), s, d, n)?;
        }
        Ok(())
    }
}

/// Running cost with coefficients polynomial in time,
/// `A(t) = Σ_m t^m/m! A_m` (likewise B, C, D), plus terminal E, G.
/// Empty lists are read as zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    #[serde(default)]
    pub a: Vec<Matrix>,
    #[serde(default)]
    pub b: Vec<Matrix>,
    #[serde(default)]
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub d: Vec<Vec<f64>>,
    #[serde(default)]
    pub e: Matrix,
    #[serde(default)]
    pub g: Vec<f64>,
}

impl CostSpec {
    /// Highest time-polynomial degree used by any running-cost term.
    pub fn degree(&self) -> usize {
        [self.a.len(), self.b.len(), self.c.len(), self.d.len()]
            .into_iter()
            .max()
            .unwrap_or(0)
            .saturating_sub(1)
    }

    /// Copy with every missing term filled with zeros of the right shape.
    pub fn normalized(&self, n: usize, k: usize) -> Result<CostSpec, ModelError> {
        let deg = self.degree();
        let pad_mats = |name: &str, v: &[Matrix], r: usize| -> Result<Vec<Matrix>, ModelError> {
            let mut out = Vec::with_capacity(deg + 1);
            for m in 0..=deg {
                match v.get(m) {
                    Some(mat) => {
                        check_mat(&format!("{name}[{m}]"), mat, r, r)?;
                        out.push(mat.clone());
                    }
                    None => out.push(vec![vec![0.0; r]; r]),
                }
            }
            Ok(out)
        };
        let pad_vecs =
            |name: &str, v: &[Vec<f64>], r: usize| -> Result<Vec<Vec<f64>>, ModelError> {
                let mut out = Vec::with_capacity(deg + 1);
                for m in 0..=deg {
                    match v.get(m) {
                        Some(x) => {
                            check_vec(&format!("{name}[{m}]"), x, r)?;
                            out.push(x.clone());
                        }
                        None => out.push(vec![0.0; r]),
                    }
                }
                Ok(out)
            };
        let e = if self.e.is_empty() {
            vec![vec![0.0; n]; n]
        } else {
            check_mat("e", &self.e, n, n)?;
            self.e.clone()
        };
        let g = if self.g.is_empty() {
            vec![0.0; n]
        } else {
            check_vec("g", &self.g, n)?;
            self.g.clone()
        };
        let spec = CostSpec {
            a: pad_mats("a", &self.a, n)?,
            b: pad_mats("b", &self.b, k)?,
            c: pad_vecs("c", &self.c, n)?,
            d: pad_vecs("d", &self.d, k)?,
            e,
            g,
        };
        for (m, mat) in spec.a.iter().chain(&spec.b).enumerate() {
            check_symmetric(&format!("cost matrix {m}"), mat)?;
        }
        check_symmetric("e", &spec.e)?;
        Ok(spec)
    }

    pub fn a_at(&self, t: f64) -> Matrix {
        poly_matrix(&self.a, t)
    }

    pub fn b_at(&self, t: f64) -> Matrix {
        poly_matrix(&self.b, t)
    }

    pub fn c_at(&self, t: f64) -> Vec<f64> {
        poly_vector(&self.c, t)
    }

    pub fn d_at(&self, t: f64) -> Vec<f64> {
        poly_vector(&self.d, t)
    }

    /// Checks A(t) ⪰ 0 and B(t) ≻ 0 on `points` equispaced times in
    /// `[0, horizon]`, and E ⪰ 0. Expects a normalized spec.
    pub fn check_definiteness(&self, horizon: f64, points: usize) -> Result<(), ModelError> {
        let tol = 1e-12;
        for i in 0..points {
            let t = horizon * i as f64 / (points - 1).max(1) as f64;
            let b = min_eigenvalue(&self.b_at(t));
            if !(b > tol) {
                return Err(ModelError::NotPositiveDefinite {
                    what: "B(t)".into(),
                    t,
                    min_eigenvalue: b,
                });
            }
            let a = min_eigenvalue(&self.a_at(t));
            if a < -tol {
                return Err(ModelError::NotPositiveSemiDefinite {
                    what: "A(t)".into(),
                    t,
                    min_eigenvalue: a,
                });
            }
        }
        let e = min_eigenvalue(&self.e);
        if e < -tol {
            return Err(ModelError::NotPositiveSemiDefinite {
                what: "E".into(),
                t: horizon,
                min_eigenvalue: e,
            });
        }
        Ok(())
    }
}

fn poly_matrix(coeffs: &[Matrix], t: f64) -> Matrix {
    let mut out = coeffs.first().cloned().unwrap_or_default();
    let mut w = 1.0;
    for (m, mat) in coeffs.iter().enumerate().skip(1) {
        w *= t / m as f64;
        for (row, src) in out.iter_mut().zip(mat) {
            for (o, s) in row.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    out
}

fn poly_vector(coeffs: &[Vec<f64>], t: f64) -> Vec<f64> {
    let mut out = coeffs.first().cloned().unwrap_or_default();
    let mut w = 1.0;
    for (m, v) in coeffs.iter().enumerate().skip(1) {
        w *= t / m as f64;
        for (o, s) in out.iter_mut().zip(v) {
            *o += w * s;
        }
    }
    out
}

pub(crate) fn min_eigenvalue(m: &Matrix) -> f64 {
    let n = m.len();
    if n == 0 {
        return f64::INFINITY;
    }
    let dm = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[i][j] + m[j][i]));
    SymmetricEigen::new(dm).eigenvalues.min()
}

fn dim_err(field: &str, expected: impl ToString, got: impl ToString) -> ModelError {
    ModelError::Dimension {
        field: field.to_string(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

fn check_vec(name: &str, v: &[f64], len: usize) -> Result<(), ModelError> {
    if v.len() != len {
        return Err(dim_err(name, len, v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite(name.into()));
    }
    Ok(())
}

fn check_mat(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<(), ModelError> {
    if m.len() != rows {
        return Err(dim_err(name, format!("{rows} rows"), m.len()));
    }
    for (i, row) in m.iter().enumerate() {
        check_vec(&format!("{name}[{i}]"), row, cols)?;
    }
    Ok(())
}

fn check_symmetric(name: &str, m: &Matrix) -> Result<(), ModelError> {
    for i in 0..m.len() {
        for j in 0..i {
            if (m[i][j] - m[j][i]).abs() > 1e-12 * (1.0 + m[i][j].abs()) {
                return Err(ModelError::NotSymmetric(name.into()));
            }
        }
    }
    Ok(())
}

/// Signature control `u^k_t = ⟨u^(k), Ŵ_t⟩`, one tensor per control coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTensor {
    pub coords: Vec<TruncatedTensor>,
}

impl ControlTensor {
    pub fn zeros(control_dim: usize, alphabet: usize, level: usize) -> Self {
        ControlTensor {
            coords: vec![TruncatedTensor::zeros(alphabet, level); control_dim],
        }
    }

    /// Control that is the constant `value` in every coordinate.
    pub fn constant(control_dim: usize, alphabet: usize, level: usize, value: f64) -> Self {
        ControlTensor {
            coords: vec![TruncatedTensor::unit(alphabet, level).scaled(value); control_dim],
        }
    }

    pub fn level(&self) -> usize {
        self.coords.first().map_or(0, TruncatedTensor::level)
    }

    pub fn alphabet(&self) -> usize {
        self.coords.first().map_or(1, TruncatedTensor::alphabet)
    }
}

/// Per-coordinate state tensors `x^(n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTensor {
    pub coords: Vec<TruncatedTensor>,
}

impl StateTensor {
    pub fn level(&self) -> usize {
        self.coords.first().map_or(0, TruncatedTensor::level)
    }
}

/// The inhomogeneous term `p` and the level-one kernel `q` of the state equation.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEquation {
    pub p: Vec<TruncatedTensor>,
    /// `q[n][n']`
    pub q: Vec<Vec<TruncatedTensor>>,
}

/// `p^(n) = x0 φ + (b0 φ + Σ_k b1 u^(k)) ⊗ 1 + Σ_d σ0 (d+1)` and
/// `q^(nn') = b2 · 1 + Σ_d σ2 · (d+1)`.
pub fn build_pq(model: &LqModel, u: &ControlTensor) -> Result<StateEquation, ModelError> {
    let (n_dim, d_dim) = (model.state_dim, model.noise_dim);
    let alphabet = model.alphabet();
    if u.coords.len() != model.control_dim {
        return Err(dim_err("control", model.control_dim, u.coords.len()));
    }
    if let Some(c) = u.coords.iter().find(|c| c.alphabet() != alphabet) {
        return Err(TensorError::AlphabetMismatch {
            left: alphabet,
            right: c.alphabet(),
        }
        .into());
    }
    let level = u.level() + 1;
    let mut p = Vec::with_capacity(n_dim);
    for n in 0..n_dim {
        let mut drift = TruncatedTensor::unit(alphabet, level - 1).scaled(model.b0[n]);
        for (k, uk) in u.coords.iter().enumerate() {
            drift.axpy(model.b1[n][k], uk)?;
        }
        let mut pn = drift.right_concat_letter(1, level)?;
        pn.coeffs_mut()[0] = model.x0[n];
        for d in 0..d_dim {
            pn.add_to(&Word::letter(d as u8 + 2), model.sigma0[n][d])?;
        }
        p.push(pn);
    }
    let mut q = Vec::with_capacity(n_dim);
    for n in 0..n_dim {
        let mut row = Vec::with_capacity(n_dim);
        for m in 0..n_dim {
            let mut qnm = TruncatedTensor::zeros(alphabet, 1);
            qnm.set(&Word::letter(1), model.b2[n][m])?;
            for d in 0..d_dim {
                qnm.set(&Word::letter(d as u8 + 2), model.sigma2[n][d][m])?;
            }
            row.push(qnm);
        }
        q.push(row);
    }
    Ok(StateEquation { p, q })
}

/// Solves `x^(n) = p^(n) + Σ_n' x^(n') ⊗ q^(nn')` on words of length ≤ `level`.
///
/// Because `q` has no empty-word part, the coefficient of a word only
/// depends on strictly shorter words, so levels are filled in order.
pub fn solve_state_tensor(eq: &StateEquation, level: usize) -> Result<StateTensor, ModelError> {
    let n_dim = eq.p.len();
    if eq.q.len() != n_dim || eq.q.iter().any(|row| row.len() != n_dim) {
        return Err(dim_err("q", format!("{n_dim}x{n_dim}"), eq.q.len()));
    }
    let alphabet = eq.p.first().map_or(1, TruncatedTensor::alphabet);
    for (n, row) in eq.q.iter().enumerate() {
        for (m, qnm) in row.iter().enumerate() {
            if qnm.alphabet() != alphabet {
                return Err(TensorError::AlphabetMismatch {
                    left: alphabet,
                    right: qnm.alphabet(),
                }
                .into());
            }
            if qnm.coeffs()[0] != 0.0 {
                return Err(ModelError::QHasUnitCoefficient { n, m });
            }
        }
    }
    let mut x: Vec<TruncatedTensor> = eq.p.iter().map(|p| p.with_level(level)).collect();
    for m in 1..=level {
        for n in 0..n_dim {
            let mut add = vec![0.0; alphabet.pow(m as u32)];
            for (np, qnm) in eq.q[n].iter().enumerate() {
                // x^{(n')}_{w1} q_{w2} over splits with |w2| = j ≥ 1.
                for j in 1..=qnm.level().min(m) {
                    let qs = qnm.level_slice(j);
                    if qs.iter().all(|&c| c == 0.0) {
                        continue;
                    }
                    let xs = x[np].level_slice(m - j);
                    let shift = qs.len();
                    for (i1, &a) in xs.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        for (i2, &b) in qs.iter().enumerate() {
                            add[i1 * shift + i2] += a * b;
                        }
                    }
                }
            }
            for (dst, a) in x[n].level_slice_mut(m).iter_mut().zip(add) {
                *dst += a;
            }
        }
    }
    Ok(StateTensor { coords: x })
}

/// Coefficientwise residual `max |x - p - Σ x ⊗ q|` over the stored words.
pub fn state_residual(x: &StateTensor, eq: &StateEquation) -> f64 {
    let level = x.level();
    let mut worst = 0.0f64;
    for (n, xn) in x.coords.iter().enumerate() {
        let mut rhs = eq.p[n].with_level(level);
        for (np, qnm) in eq.q[n].iter().enumerate() {
            let prod = x.coords[np]
                .concat(qnm, level)
                .expect("alphabets checked by solver");
            rhs.axpy(1.0, &prod).expect("same alphabet");
        }
        for (a, b) in xn.coeffs().iter().zip(rhs.coeffs()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Checks `|x^(n)_v| ≤ C^{|v|}` for every stored nonempty word, with `C`
/// the larger of the low-level growth constant (levels up to where `p`
/// is supported) and the largest absolute row sum of `q`.
pub fn growth_bound_check(x: &StateTensor, eq: &StateEquation) -> bool {
    growth_constant(x, eq).is_none_or(|c| {
        x.coords.iter().all(|xn| {
            (1..=xn.level()).all(|m| {
                let bound = c.powi(m as i32);
                xn.level_slice(m)
                    .iter()
                    .all(|v| v.abs() <= bound * (1.0 + 1e-12))
            })
        })
    })
}

/// The constant `C` used by [`growth_bound_check`]; `None` for an all-zero state.
pub fn growth_constant(x: &StateTensor, eq: &StateEquation) -> Option<f64> {
    let p_support =
        eq.p.iter()
            .map(|p| {
                (1..=p.level())
                    .rev()
                    .find(|&m| p.level_slice(m).iter().any(|&c| c != 0.0))
                    .unwrap_or(1)
            })
            .max()
            .unwrap_or(1);
    let mut c1 = 0.0f64;
    for xn in &x.coords {
        for m in 1..=p_support.min(xn.level()) {
            for v in xn.level_slice(m) {
                if *v != 0.0 {
                    c1 = c1.max(v.abs().powf(1.0 / m as f64));
                }
            }
        }
    }
    let mut row_sum = 0.0f64;
    for row in &eq.q {
        let alphabet = row.first().map_or(1, TruncatedTensor::alphabet);
        for j in 0..alphabet {
            let s: f64 = row.iter().map(|q| q.level_slice(1)[j].abs()).sum();
            row_sum = row_sum.max(s);
        }
    }
    let c = c1.max(row_sum);
    if c == 0.0
        && x.coords
            .iter()
            .all(|xn| xn.coeffs()[1..].iter().all(|&v| v == 0.0))
    {
        None
    } else {
        Some(c)
    }
}

/// Recommended cost-tensor level `2L + deg + 1`, which keeps every term of
/// the cost tensor of a level-`L` state.
pub fn cost_level(state_level: usize, control_level: usize, cost: &CostSpec) -> usize {
    2 * state_level.max(control_level) + cost.degree() + 1
}

/// Truncated cost tensor `J^L(u)`; `cost` must be normalized.
pub fn build_cost_tensor(
    model: &LqModel,
    cost: &CostSpec,
    u: &ControlTensor,
    x: &StateTensor,
    level: usize,
) -> Result<TruncatedTensor, ModelError> {
    let (n_dim, k_dim) = (model.state_dim, model.control_dim);
    if x.coords.len() != n_dim {
        return Err(dim_err("state", n_dim, x.coords.len()));
    }
    if u.coords.len() != k_dim {
        return Err(dim_err("control", k_dim, u.coords.len()));
    }
    let alphabet = model.alphabet();
    let inner_level = level.saturating_sub(1);
    let mut inner = TruncatedTensor::zeros(alphabet, inner_level);
    let mut total = TruncatedTensor::zeros(alphabet, level);

    let xx = symmetric_products(&x.coords, level, |n, m| {
        cost.a.iter().any(|a| a[n][m] != 0.0) || cost.e[n][m] != 0.0
    })?;
    let uu = symmetric_products(&u.coords, inner_level, |k, l| {
        cost.b.iter().any(|b| b[k][l] != 0.0)
    })?;

    for m in 0..=cost.degree() {
        let mut poly_m = TruncatedTensor::zeros(alphabet, inner_level);
        for n in 0..n_dim {
            for np in 0..n_dim {
                let w = cost.a[m][n][np];
                if w != 0.0 {
                    poly_m.axpy(w, product(&xx, n, np))?;
                }
            }
            if cost.c[m][n] != 0.0 {
                poly_m.axpy(2.0 * cost.c[m][n], &x.coords[n])?;
            }
        }
        for k in 0..k_dim {
            for kp in 0..k_dim {
                let w = cost.b[m][k][kp];
                if w != 0.0 {
                    poly_m.axpy(w, product(&uu, k, kp))?;
                }
            }
            if cost.d[m][k] != 0.0 {
                poly_m.axpy(2.0 * cost.d[m][k], &u.coords[k])?;
            }
        }
        if poly_m.is_zero() {
            continue;
        }
        let poly_m = poly_m.with_level(inner_level);
        if m == 0 {
            inner.axpy(1.0, &poly_m)?;
        } else if m <= inner_level {
            let time_m = TruncatedTensor::basis(alphabet, m, &Word::repeat(1, m), 1.0)?;
            inner.axpy(1.0, &time_m.shuffle(&poly_m, inner_level)?)?;
        }
    }
    total.axpy(1.0, &inner.right_concat_letter(1, level)?)?;
    for n in 0..n_dim {
        for np in 0..n_dim {
            if cost.e[n][np] != 0.0 {
                total.axpy(cost.e[n][np], product(&xx, n, np))?;
            }
        }
        if cost.g[n] != 0.0 {
            total.axpy(2.0 * cost.g[n], &x.coords[n].with_level(level))?;
        }
    }
    Ok(total.with_level(level))
}

/// Shuffle products `t_i ⧢ t_j` for `i ≤ j` where `needed(i, j)` or
/// `needed(j, i)`, stored row-major in the upper triangle.
fn symmetric_products(
    tensors: &[TruncatedTensor],
    level: usize,
    needed: impl Fn(usize, usize) -> bool,
) -> Result<Vec<Option<TruncatedTensor>>, ModelError> {
    let n = tensors.len();
    let mut out = vec![None; n * n];
    for i in 0..n {
        for j in i..n {
            if needed(i, j) || needed(j, i) {
                out[i * n + j] = Some(tensors[i].shuffle(&tensors[j], level)?);
            }
        }
    }
    Ok(out)
}

fn product(products: &[Option<TruncatedTensor>], i: usize, j: usize) -> &TruncatedTensor {
    let n = (products.len() as f64).sqrt() as usize;
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    products[a * n + b]
        .as_ref()
        .expect("product requested by the cost spec")
}

/// `⟨J, E[Ŵ_T]⟩`.
pub fn evaluate_cost(
    cost_tensor: &TruncatedTensor,
    expected_sig: &TruncatedTensor,
) -> Result<f64, ModelError> {
    if expected_sig.level() < cost_tensor.level() {
        return Err(ModelError::InsufficientLevel {
            have: expected_sig.level(),
            need: cost_tensor.level(),
        });
    }
    Ok(cost_tensor.pair(expected_sig)?)
}

/// Evaluates the truncated cost `u ↦ ⟨J^L(u), E[Ŵ_T]⟩` for a fixed problem,
/// state level and expected signature.
#[derive(Clone, Debug)]
pub struct CostEvaluator {
    pub model: LqModel,
    pub cost: CostSpec,
    pub state_level: usize,
    pub cost_level: usize,
    pub expected_signature: TruncatedTensor,
}

impl CostEvaluator {
    /// `cost` is normalized here; the expected signature must reach the
    /// cost-tensor level `2L + deg + 1` for the largest control level used.
    pub fn new(
        model: &LqModel,
        cost: &CostSpec,
        state_level: usize,
        cost_level: usize,
        expected_signature: TruncatedTensor,
    ) -> Result<Self, ModelError> {
        model.validate()?;
        let cost = cost.normalized(model.state_dim, model.control_dim)?;
        if expected_signature.level() < cost_level {
            return Err(ModelError::InsufficientLevel {
                have: expected_signature.level(),
                need: cost_level,
            });
        }
        if expected_signature.alphabet() != model.alphabet() {
            return Err(TensorError::AlphabetMismatch {
                left: model.alphabet(),
                right: expected_signature.alphabet(),
            }
            .into());
        }
        Ok(CostEvaluator {
            model: model.clone(),
            cost,
            state_level,
            cost_level,
            expected_signature,
        })
    }

    pub fn state(&self, u: &ControlTensor) -> Result<StateTensor, ModelError> {
        let eq = build_pq(&self.model, u)?;
        solve_state_tensor(&eq, self.state_level)
    }

    pub fn cost_tensor(&self, u: &ControlTensor) -> Result<TruncatedTensor, ModelError> {
        let x = self.state(u)?;
        build_cost_tensor(&self.model, &self.cost, u, &x, self.cost_level)
    }

    pub fn evaluate(&self, u: &ControlTensor) -> Result<f64, ModelError> {
        evaluate_cost(&self.cost_tensor(u)?, &self.expected_signature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::fawcett_expected_signature;

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    fn t(alphabet: usize, level: usize, terms: &[(&str, f64)]) -> TruncatedTensor {
        let words: Vec<(Word, f64)> = terms.iter().map(|(s, c)| (w(s), *c)).collect();
        TruncatedTensor::from_terms(alphabet, level, words.iter().map(|(w, c)| (w, *c))).unwrap()
    }

    #[test]
    fn pq_without_drift_or_noise() {
        let mut model = LqModel::zeros(2, 1, 1, 1.0);
        model.x0 = vec![3.0, -1.0];
        let u = ControlTensor::zeros(1, 2, 2);
        let eq = build_pq(&model, &u).unwrap();
        assert_eq!(eq.p[0].with_level(0), t(2, 0, &[("e", 3.0)]));
        assert!(eq.p[1].coeffs()[1..].iter().all(|&c| c == 0.0));
        assert!(eq.q[0][1].is_zero());
    }

    #[test]
    fn pq_scalar_example() {
        let model = LqModel::scalar(4.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        let u = ControlTensor::constant(1, 2, 0, 1.0);
        let eq = build_pq(&model, &u).unwrap();
        assert_eq!(eq.p[0], t(2, 1, &[("e", 4.0), ("1", 2.0), ("2", 1.0)]));
        assert_eq!(eq.q[0][0], t(2, 1, &[("1", 1.0), ("2", 1.0)]));
    }

    #[test]
    fn state_with_zero_q_is_p() {
        let eq = StateEquation {
            p: vec![t(2, 2, &[("e", 1.0), ("12", 2.0)])],
            q: vec![vec![TruncatedTensor::zeros(2, 1)]],
        };
        let x = solve_state_tensor(&eq, 4).unwrap();
        assert_eq!(x.coords[0], eq.p[0].with_level(4));
        let x = solve_state_tensor(&eq, 1).unwrap();
        assert_eq!(x.coords[0], t(2, 1, &[("e", 1.0)]));
    }

    #[test]
    fn exponential_state() {
        let eq = StateEquation {
            p: vec![TruncatedTensor::unit(2, 0)],
            q: vec![vec![t(2, 1, &[("1", 1.0)])]],
        };
        let x = solve_state_tensor(&eq, 5).unwrap();
        for m in 0..=5 {
            assert_eq!(x.coords[0].get(&Word::repeat(1, m)), 1.0);
        }
        assert_eq!(x.coords[0].get(&w("12")), 0.0);
        assert!(state_residual(&x, &eq) <= 1e-12);
        assert!(growth_bound_check(&x, &eq));
        assert_eq!(growth_constant(&x, &eq), Some(1.0));

        let eq2 = StateEquation {
            p: vec![TruncatedTensor::unit(2, 0)],
            q: vec![vec![t(2, 1, &[("2", 1.0)])]],
        };
        let x2 = solve_state_tensor(&eq2, 4).unwrap();
        for m in 0..=4 {
            assert_eq!(x2.coords[0].get(&Word::repeat(2, m)), 1.0);
        }
    }

    #[test]
    fn growth_bound_doubling() {
        let eq = StateEquation {
            p: vec![TruncatedTensor::unit(2, 0)],
            q: vec![vec![t(2, 1, &[("1", 2.0)])]],
        };
        let x = solve_state_tensor(&eq, 6).unwrap();
        assert_eq!(x.coords[0].get(&Word::repeat(1, 6)), 64.0);
        assert_eq!(growth_constant(&x, &eq), Some(2.0));
        assert!(growth_bound_check(&x, &eq));

        let zero = StateEquation {
            p: vec![TruncatedTensor::zeros(2, 0)],
            q: vec![vec![TruncatedTensor::zeros(2, 1)]],
        };
        let x = solve_state_tensor(&zero, 3).unwrap();
        assert!(growth_bound_check(&x, &zero));
    }

    #[test]
    fn q_with_unit_coefficient_rejected() {
        let eq = StateEquation {
            p: vec![TruncatedTensor::unit(2, 0)],
            q: vec![vec![t(2, 1, &[("e", 1.0)])]],
        };
        assert_eq!(
            solve_state_tensor(&eq, 2),
            Err(ModelError::QHasUnitCoefficient { n: 0, m: 0 })
        );
    }

    #[test]
    fn coupled_state_residual() {
        let mut model = LqModel::zeros(2, 1, 2, 1.0);
        model.x0 = vec![1.0, -2.0];
        model.b0 = vec![0.3, 0.1];
        model.b1 = vec![vec![1.0], vec![-0.5]];
        model.b2 = vec![vec![0.2, -0.4], vec![0.7, 0.1]];
        model.sigma0 = vec![vec![0.5, 0.0], vec![0.1, 0.2]];
        model.sigma2 = vec![
            vec![vec![0.3, 0.1], vec![0.0, -0.2]],
            vec![vec![0.05, 0.4], vec![0.6, 0.0]],
        ];
        model.validate().unwrap();
        let mut u = ControlTensor::zeros(1, 3, 2);
        u.coords[0].set(&w("12"), 0.7).unwrap();
        u.coords[0].set(&w("e"), -1.0).unwrap();
        let eq = build_pq(&model, &u).unwrap();
        let x = solve_state_tensor(&eq, 5).unwrap();
        assert!(state_residual(&x, &eq) <= 1e-12);
        assert!(growth_bound_check(&x, &eq));
        assert_eq!(x.coords[1].get(&Word::empty()), -2.0);
    }

    #[test]
    fn cost_tensor_zero_cost() {
        let model = LqModel::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        let cost = CostSpec::default().normalized(1, 1).unwrap();
        let u = ControlTensor::constant(1, 2, 1, 1.0);
        let x = solve_state_tensor(&build_pq(&model, &u).unwrap(), 3).unwrap();
        assert!(build_cost_tensor(&model, &cost, &u, &x, 7)
            .unwrap()
            .is_zero());
    }

    #[test]
    fn unit_running_cost_integrates_time() {
        let model = LqModel::scalar(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.8);
        let cost = CostSpec {
            b: vec![vec![vec![1.0]]],
            ..Default::default()
        }
        .normalized(1, 1)
        .unwrap();
        let u = ControlTensor::constant(1, 2, 0, 1.0);
        let x = solve_state_tensor(&build_pq(&model, &u).unwrap(), 2).unwrap();
        let j = build_cost_tensor(&model, &cost, &u, &x, 5).unwrap();
        assert_eq!(j, t(2, 5, &[("1", 1.0)]));
        let es = fawcett_expected_signature(0.8, 1, 5);
        assert!((evaluate_cost(&j, &es).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn frozen_state_terminal_cost() {
        let c = 3.0;
        let model = LqModel::scalar(c, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let cost = CostSpec {
            b: vec![vec![vec![1.0]]],
            e: vec![vec![1.0]],
            ..Default::default()
        }
        .normalized(1, 1)
        .unwrap();
        let u = ControlTensor::zeros(1, 2, 1);
        let x = solve_state_tensor(&build_pq(&model, &u).unwrap(), 3).unwrap();
        let j = build_cost_tensor(&model, &cost, &u, &x, 7).unwrap();
        assert_eq!(j, t(2, 7, &[("e", c * c)]));
        let es = fawcett_expected_signature(1.0, 1, 7);
        assert_eq!(evaluate_cost(&j, &es).unwrap(), c * c);
        assert!(evaluate_cost(&j, &fawcett_expected_signature(1.0, 1, 3)).is_err());
    }

    #[test]
    fn time_weighted_running_cost() {
        // B(t) = 1 + t, constant control 1 → ∫ (1 + t) dt = T + T²/2.
        let tt = 0.6;
        let model = LqModel::scalar(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, tt);
        let cost = CostSpec {
            b: vec![vec![vec![1.0]], vec![vec![1.0]]],
            ..Default::default()
        }
        .normalized(1, 1)
        .unwrap();
        let u = ControlTensor::constant(1, 2, 0, 1.0);
        let x = solve_state_tensor(&build_pq(&model, &u).unwrap(), 2).unwrap();
        let j = build_cost_tensor(&model, &cost, &u, &x, cost_level(2, 0, &cost)).unwrap();
        let es = fawcett_expected_signature(tt, 1, j.level());
        let v = evaluate_cost(&j, &es).unwrap();
        assert!((v - (tt + tt * tt / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn cost_spec_validation() {
        let bad = CostSpec {
            b: vec![vec![vec![0.0]]],
            ..Default::default()
        }
        .normalized(1, 1)
        .unwrap();
        assert!(matches!(
            bad.check_definiteness(1.0, 101),
            Err(ModelError::NotPositiveDefinite { .. })
        ));
        let asym = CostSpec {
            b: vec![vec![vec![1.0, 0.5], vec![0.0, 1.0]]],
            ..Default::default()
        };
        assert!(matches!(
            asym.normalized(1, 2),
            Err(ModelError::NotSymmetric(_))
        ));
        let shape = CostSpec {
            e: vec![vec![1.0, 0.0]],
            ..Default::default()
        };
        assert!(matches!(
            shape.normalized(1, 1),
            Err(ModelError::Dimension { .. })
        ));
    }

    #[test]
    fn model_validation() {
        let mut m = LqModel::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        assert!(m.validate().is_ok());
        m.horizon = 0.0;
        assert_eq!(m.validate(), Err(ModelError::Horizon(0.0)));
        m.horizon = 1.0;
        m.b1 = vec![vec![1.0, 2.0]];
        assert!(matches!(m.validate(), Err(ModelError::Dimension { .. })));
        m.b1 = vec![vec![f64::NAN]];
        assert!(matches!(m.validate(), Err(ModelError::NonFinite(_))));
    }
}
