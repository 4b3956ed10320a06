//! Reduction of the truncated cost to an explicit quadratic form in the
//! control coefficients, and its minimization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::model::{ControlTensor, CostEvaluator, ModelError, StateTensor};
use crate::par::{map_indexed, Workers};
use crate::tensor::{enumerate_words, word_count, TruncatedTensor, Word};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("Hessian is not positive definite (min eigenvalue {min_eigenvalue:e}, threshold {threshold:e})")]
    NotPositiveDefinite { min_eigenvalue: f64, threshold: f64 },
    #[error("coefficient vector has length {got}, basis has dimension {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Coordinates `(k, word)` of a level-`M` control, coordinate-major, words in
/// canonical order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlBasis {
    control_dim: usize,
    alphabet: usize,
    level: usize,
}

impl ControlBasis {
    pub fn new(control_dim: usize, alphabet: usize, level: usize) -> Self {
        ControlBasis {
            control_dim,
            alphabet,
            level,
        }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn words_per_coord(&self) -> usize {
        word_count(self.alphabet, self.level)
    }

    pub fn dim(&self) -> usize {
        self.control_dim * self.words_per_coord()
    }

    /// `(k, word)` pairs in basis order, `k` counted from 0.
    pub fn entries(&self) -> Vec<(usize, Word)> {
        let words = enumerate_words(self.alphabet, self.level);
        (0..self.control_dim)
            .flat_map(|k| words.iter().cloned().map(move |w| (k, w)))
            .collect()
    }

    pub fn flatten(&self, u: &ControlTensor) -> Vec<f64> {
        let per = self.words_per_coord();
        let mut out = Vec::with_capacity(self.dim());
        for c in &u.coords {
            out.extend_from_slice(&c.with_level(self.level).coeffs()[..per]);
        }
        out
    }

    pub fn to_control_tensor(&self, v: &[f64]) -> Result<ControlTensor, OptimError> {
        if v.len() != self.dim() {
            return Err(OptimError::LengthMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        let per = self.words_per_coord();
        Ok(ControlTensor {
            coords: v
                .chunks(per)
                .map(|c| TruncatedTensor::from_coeffs(self.alphabet, self.level, c.to_vec()))
                .collect(),
        })
    }
}

/// `v ↦ vᵀHv + gᵀv + c0` with symmetric `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c0: f64,
}

impl QuadraticForm {
    /// Symmetrizes `h` on construction.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, c0: f64) -> Self {
        let h = (&h + h.transpose()) * 0.5;
        QuadraticForm { h, g, c0 }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        (v.transpose() * &self.h * &v)[(0, 0)] + self.g.dot(&v) + self.c0
    }

    /// CSV dump: `P` rows of `H`, then a row of `g`, then `c0`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| self.h[(i, j)].to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let g: Vec<String> = self.g.iter().map(f64::to_string).collect();
        out.push_str(&g.join(","));
        out.push('\n');
        out.push_str(&self.c0.to_string());
        out.push('\n');
        out
    }
}

/// Probe coefficient vectors in evaluation order: zero, `+e_i`, `-e_i`,
/// then `e_i + e_j` for `i < j`.
pub fn probe_points(dim: usize) -> Vec<Vec<f64>> {
    let unit = |i: usize, s: f64| {
        let mut v = vec![0.0; dim];
        v[i] = s;
        v
    };
    let mut out = vec![vec![0.0; dim]];
    out.extend((0..dim).map(|i| unit(i, 1.0)));
    out.extend((0..dim).map(|i| unit(i, -1.0)));
    for i in 0..dim {
        for j in i + 1..dim {
            let mut v = unit(i, 1.0);
            v[j] = 1.0;
            out.push(v);
        }
    }
    out
}

/// Recovers the quadratic form of an exactly quadratic evaluator from
/// `1 + 2P + P(P-1)/2` evaluations:
///
/// ```text
/// c0   = F(0)
/// H_ii = (F(e_i) + F(-e_i))/2 - c0
/// g_i  = (F(e_i) - F(-e_i))/2
/// H_ij = (F(e_i + e_j) - H_ii - H_jj - c0)/2 - (g_i + g_j)/2
/// ```
pub fn extract_quadratic<F, E>(
    evaluator: F,
    basis: &ControlBasis,
    workers: Workers,
) -> Result<QuadraticForm, E>
where
    F: Fn(&ControlTensor) -> Result<f64, E> + Sync + Send,
    E: Send,
{
    let dim = basis.dim();
    let probes = probe_points(dim);
    let values: Vec<Result<f64, E>> = map_indexed(probes.len(), workers, |i| {
        let u = basis
            .to_control_tensor(&probes[i])
            .expect("probe length equals basis dimension");
        evaluator(&u)
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_, E>>()?;

    let c0 = values[0];
    let plus = &values[1..=dim];
    let minus = &values[dim + 1..=2 * dim];
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    for i in 0..dim {
        h[(i, i)] = 0.5 * (plus[i] + minus[i]) - c0;
        g[i] = 0.5 * (plus[i] - minus[i]);
    }
    let mut next = 2 * dim + 1;
    for i in 0..dim {
        for j in i + 1..dim {
            let hij = 0.5 * (values[next] - h[(i, i)] - h[(j, j)] - c0) - 0.5 * (g[i] + g[j]);
            h[(i, j)] = hij;
            h[(j, i)] = hij;
            next += 1;
        }
    }
    Ok(QuadraticForm::new(h, g, c0))
}

fn convexity_threshold(eigenvalues: &DVector<f64>) -> f64 {
    let norm = eigenvalues.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    1e-10 * (1.0 + norm)
}

/// Whether the smallest eigenvalue of `H` clears `1e-10·(1 + ‖H‖₂)`.
pub fn check_strict_convexity(q: &QuadraticForm) -> (bool, f64) {
    if q.dim() == 0 {
        return (true, f64::INFINITY);
    }
    let eig = SymmetricEigen::new(q.h.clone()).eigenvalues;
    let min = eig.min();
    (min > convexity_threshold(&eig), min)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    Cholesky,
    PseudoInverse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimizer {
    pub v: Vec<f64>,
    pub value: f64,
    /// `‖2Hv + g‖`
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub method: SolveMethod,
}

/// Solves the first-order condition `2Hv = -g`.
///
/// Uses a Cholesky factorization, or an SVD pseudo-inverse when the
/// smallest eigenvalue is within 10× of the convexity threshold.
pub fn minimize_quadratic(q: &QuadraticForm) -> Result<Minimizer, OptimError> {
    let dim = q.dim();
    if dim == 0 {
        return Ok(Minimizer {
            v: Vec::new(),
            value: q.c0,
            residual: 0.0,
            min_eigenvalue: f64::INFINITY,
            method: SolveMethod::Cholesky,
        });
    }
    let eig = SymmetricEigen::new(q.h.clone()).eigenvalues;
    let min = eig.min();
    let threshold = convexity_threshold(&eig);
    if !(min > threshold) {
        return Err(OptimError::NotPositiveDefinite {
            min_eigenvalue: min,
            threshold,
        });
    }
    let two_h = &q.h * 2.0;
    let rhs = -&q.g;
    let (v, method) = match (min > 10.0 * threshold)
        .then(|| two_h.clone().cholesky())
        .flatten()
    {
        Some(chol) => (chol.solve(&rhs), SolveMethod::Cholesky),
        None => {
            let svd = two_h.clone().svd(true, true);
            let v = svd
                .solve(&rhs, 1e-14 * eig.amax().max(1.0))
                .expect("SVD computed with both factors");
            (v, SolveMethod::PseudoInverse)
        }
    };
    let residual = (&two_h * &v + &q.g).norm();
    let v: Vec<f64> = v.iter().copied().collect();
    Ok(Minimizer {
        value: q.value(&v),
        v,
        residual,
        min_eigenvalue: min,
        method,
    })
}

pub fn to_control_tensor(v: &[f64], basis: &ControlBasis) -> Result<ControlTensor, OptimError> {
    basis.to_control_tensor(v)
}

/// Assembles the same quadratic form without probing, from the affine map
/// `v ↦ x(v) = x(0) + Σ v_i (x(e_i) - x(0))` and the bilinear structure of
/// the cost tensor.
pub fn assemble_quadratic_direct(
    evaluator: &CostEvaluator,
    basis: &ControlBasis,
) -> Result<QuadraticForm, OptimError> {
    let dim = basis.dim();
    let zero_u = basis.to_control_tensor(&vec![0.0; dim])?;
    let x0 = evaluator.state(&zero_u)?;
    let mut deltas = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        let u = basis.to_control_tensor(&e)?;
        let x = evaluator.state(&u)?;
        let dx = StateTensor {
            coords: x
                .coords
                .iter()
                .zip(&x0.coords)
                .map(|(a, b)| a - b)
                .collect(),
        };
        deltas.push((dx, u));
    }
    let forms = CostForms::new(evaluator);
    let base = (x0, zero_u);
    let c0 = forms.bilinear(&base, &base)? + forms.linear(&base)?;
    let mut g = DVector::zeros(dim);
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        g[i] = 2.0 * forms.bilinear(&base, &deltas[i])? + forms.linear(&deltas[i])?;
        for j in i..dim {
            let b = forms.bilinear(&deltas[i], &deltas[j])?;
            h[(i, j)] = b;
            h[(j, i)] = b;
        }
    }
    Ok(QuadraticForm::new(h, g, c0))
}

/// Symmetric bilinear and linear parts of the cost tensor paired with the
/// expected signature, as functions of (state tensor, control tensor).
struct CostForms<'a> {
    ev: &'a CostEvaluator,
}

impl<'a> CostForms<'a> {
    fn new(ev: &'a CostEvaluator) -> Self {
        CostForms { ev }
    }

    fn time_weighted(&self, m: usize, t: &TruncatedTensor) -> Result<TruncatedTensor, ModelError> {
        let inner = self.ev.cost_level - 1;
        let alphabet = self.ev.model.alphabet();
        if m == 0 {
            return Ok(t.with_level(inner));
        }
        let time = TruncatedTensor::basis(alphabet, m, &Word::repeat(1, m), 1.0)?;
        Ok(time.shuffle(t, inner)?)
    }

    /// `⟨(y)⊗1, E⟩` for the running part and `⟨y, E⟩` for the terminal part.
    fn pair_running(&self, y: &TruncatedTensor) -> Result<f64, ModelError> {
        let j = y.right_concat_letter(1, self.ev.cost_level)?;
        Ok(j.pair(&self.ev.expected_signature)?)
    }

    fn bilinear(
        &self,
        a: &(StateTensor, ControlTensor),
        b: &(StateTensor, ControlTensor),
    ) -> Result<f64, ModelError> {
        let cost = &self.ev.cost;
        let inner = self.ev.cost_level - 1;
        let alphabet = self.ev.model.alphabet();
        let mut running = TruncatedTensor::zeros(alphabet, inner);
        let mut total = 0.0;
        for (n, xa) in a.0.coords.iter().enumerate() {
            for (np, xb) in b.0.coords.iter().enumerate() {
                let uses_a = cost.a.iter().any(|am| am[n][np] != 0.0);
                let e = cost.e[n][np];
                if !uses_a && e == 0.0 {
                    continue;
                }
                let s = xa.shuffle(xb, self.ev.cost_level)?;
                if e != 0.0 {
                    total += e * s.pair(&self.ev.expected_signature)?;
                }
                for (m, am) in cost.a.iter().enumerate() {
                    if am[n][np] != 0.0 {
                        running.axpy(am[n][np], &self.time_weighted(m, &s.with_level(inner))?)?;
                    }
                }
            }
        }
        for (k, ua) in a.1.coords.iter().enumerate() {
            for (kp, ub) in b.1.coords.iter().enumerate() {
                if !cost.b.iter().any(|bm| bm[k][kp] != 0.0) {
                    continue;
                }
                let s = ua.shuffle(ub, inner)?;
                for (m, bm) in cost.b.iter().enumerate() {
                    if bm[k][kp] != 0.0 {
                        running.axpy(bm[k][kp], &self.time_weighted(m, &s)?)?;
                    }
                }
            }
        }
        Ok(total + self.pair_running(&running.with_level(inner))?)
    }

    fn linear(&self, a: &(StateTensor, ControlTensor)) -> Result<f64, ModelError> {
        let cost = &self.ev.cost;
        let inner = self.ev.cost_level - 1;
        let alphabet = self.ev.model.alphabet();
        let mut running = TruncatedTensor::zeros(alphabet, inner);
        let mut total = 0.0;
        for (n, x) in a.0.coords.iter().enumerate() {
            for (m, cm) in cost.c.iter().enumerate() {
                if cm[n] != 0.0 {
                    running.axpy(2.0 * cm[n], &self.time_weighted(m, x)?)?;
                }
            }
            if cost.g[n] != 0.0 {
                total += 2.0
                    * cost.g[n]
                    * x.with_level(self.ev.cost_level)
                        .pair(&self.ev.expected_signature)?;
            }
        }
        for (k, u) in a.1.coords.iter().enumerate() {
            for (m, dm) in cost.d.iter().enumerate() {
                if dm[k] != 0.0 {
                    running.axpy(2.0 * dm[k], &self.time_weighted(m, u)?)?;
                }
            }
        }
        Ok(total + self.pair_running(&running.with_level(inner))?)
    }
}
