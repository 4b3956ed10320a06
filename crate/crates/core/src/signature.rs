//! Truncated signatures of time-augmented piecewise-linear paths.
//!
//! The time-augmented path of `W` in ℝ^D is `t ↦ (t, W_t)`; letter 1 is time
//! and letter `d + 1` is `W^(d)`. Each linear segment contributes the
//! truncated tensor exponential of its increment (Chen's identity), which
//! realizes the Stratonovich iterated integrals of the interpolated path.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::par::{chunked_fold, Workers};
use crate::tensor::{TruncatedTensor, Word};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignatureError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("times must start at 0 and be strictly increasing (index {0})")]
    BadTimes(usize),
    #[error("a path needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("increment has {got} components, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("paths do not share the same time grid (path {0})")]
    MismatchedGrids(usize),
    #[error("at least {needed} paths are required, got {got}")]
    TooFewPaths { needed: usize, got: usize },
    #[error("malformed path CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// Samples of a D-dimensional driver on an increasing time grid starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SampledPath {
    /// `values` is row-major: `values[i * dim + d]` is `W^(d)` at `times[i]`.
    pub fn new(times: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self, SignatureError> {
        if times.len() * dim != values.len() {
            return Err(SignatureError::DimensionMismatch {
                expected: times.len() * dim,
                got: values.len(),
            });
        }
        if times.len() < 2 {
            return Err(SignatureError::TooFewSamples {
                needed: 2,
                got: times.len(),
            });
        }
        if times[0] != 0.0 {
            return Err(SignatureError::BadTimes(0));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SignatureError::BadTimes(i + 1));
        }
        Ok(SampledPath { dim, times, values })
    }

    /// Path on the uniform grid `k·T/steps` built from its increments,
    /// starting at the origin.
    pub fn from_increments(
        horizon: f64,
        increments: &[f64],
        dim: usize,
    ) -> Result<Self, SignatureError> {
        let steps = increments.len() / dim.max(1);
        let dt = horizon / steps as f64;
        let times = (0..=steps).map(|k| k as f64 * dt).collect();
        let mut values = vec![0.0; (steps + 1) * dim];
        for k in 0..steps {
            for d in 0..dim {
                values[(k + 1) * dim + d] = values[k * dim + d] + increments[k * dim + d];
            }
        }
        Self::new(times, values, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("paths hold at least two samples")
    }

    /// Time step and driver increment of segment `i` (from sample i to i+1).
    pub fn increment(&self, i: usize, dw: &mut [f64]) -> f64 {
        let (a, b) = (self.value(i), self.value(i + 1));
        for d in 0..self.dim {
            dw[d] = b[d] - a[d];
        }
        self.times[i + 1] - self.times[i]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "t")?;
        for d in 1..=self.dim {
            write!(out, ",w{d}")?;
        }
        writeln!(out)?;
        for i in 0..self.len() {
            write!(out, "{}", self.times[i])?;
            for v in self.value(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self, SignatureError> {
        let mut lines = reader.lines().enumerate();
        let bad = |line: usize, reason: String| SignatureError::Csv { line, reason };
        let header = match lines.next() {
            Some((_, Ok(h))) => h,
            _ => return Err(bad(1, "missing header".into())),
        };
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(bad(1, "header must start with \"t\"".into()));
        }
        for (d, c) in cols.iter().enumerate().skip(1) {
            if *c != format!("w{d}") {
                return Err(bad(1, format!("unexpected column {c:?}")));
            }
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (n, line) in lines {
            let line = line.map_err(|e| bad(n + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .trim()
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(n + 1, e.to_string()))?;
            if fields.len() != dim + 1 {
                return Err(bad(n + 1, format!("expected {} fields", dim + 1)));
            }
            times.push(fields[0]);
            values.extend_from_slice(&fields[1..]);
        }
        Self::new(times, values, dim)
    }
}

/// Running truncated signature of a time-augmented path.
#[derive(Clone, Debug)]
pub struct SignatureState {
    tensor: TruncatedTensor,
    current_time: f64,
    increment: Vec<f64>,
    acc: Vec<f64>,
    next: Vec<f64>,
}

impl PartialEq for SignatureState {
    fn eq(&self, other: &Self) -> bool {
        self.tensor == other.tensor && self.current_time == other.current_time
    }
}

impl SignatureState {
    /// Signature of the constant path: the unit tensor at time 0.
    pub fn new(driver_dim: usize, level: usize) -> Self {
        let alphabet = driver_dim + 1;
        let top = alphabet.pow(level as u32);
        SignatureState {
            tensor: TruncatedTensor::unit(alphabet, level),
            current_time: 0.0,
            increment: vec![0.0; alphabet],
            acc: Vec::with_capacity(top),
            next: Vec::with_capacity(top),
        }
    }

    pub fn level(&self) -> usize {
        self.tensor.level()
    }

    pub fn driver_dim(&self) -> usize {
        self.tensor.alphabet() - 1
    }

    pub fn tensor(&self) -> &TruncatedTensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> TruncatedTensor {
        self.tensor
    }

    pub fn current_time(&self) -> f64 {
        self.current_time
    }

    pub fn coeff(&self, word: &Word) -> f64 {
        self.tensor.get(word)
    }

    /// ⟨ell, S⟩ for a functional `ell` of level at most the signature level.
    pub fn pair(&self, ell: &TruncatedTensor) -> f64 {
        ell.coeffs()
            .iter()
            .zip(self.tensor.coeffs())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Chen update by one linear segment, returning the new state.
    pub fn chen_step(&self, dt: f64, dw: &[f64]) -> Result<Self, SignatureError> {
        let mut next = self.clone();
        next.step(dt, dw)?;
        Ok(next)
    }

    /// In-place Chen update `S ← S ⊗ exp(Δ)`, Δ = dt·e₁ + Σ dw_d·e_{d+1}.
    pub fn step(&mut self, dt: f64, dw: &[f64]) -> Result<(), SignatureError> {
        if !(dt > 0.0) {
            return Err(SignatureError::NonPositiveStep(dt));
        }
        let alphabet = self.tensor.alphabet();
        if dw.len() + 1 != alphabet {
            return Err(SignatureError::DimensionMismatch {
                expected: alphabet - 1,
                got: dw.len(),
            });
        }
        self.increment[0] = dt;
        self.increment[1..].copy_from_slice(dw);
        self.apply_increment();
        self.current_time += dt;
        Ok(())
    }

    /// Level k of S ⊗ exp(Δ) is Σ_j S_{k-j} ⊗ Δ^{⊗j}/j!, evaluated by
    /// Horner's rule from the top level down so lower levels are still old.
    fn apply_increment(&mut self) {
        let alphabet = self.tensor.alphabet();
        let level = self.tensor.level();
        for k in (1..=level).rev() {
            self.acc.clear();
            self.acc.extend_from_slice(self.tensor.level_slice(0));
            for i in 1..=k {
                let scale = 1.0 / (k - i + 1) as f64;
                self.next.clear();
                for &a in &self.acc {
                    let a = a * scale;
                    self.next.extend(self.increment.iter().map(|&d| a * d));
                }
                if i < k {
                    for (n, s) in self.next.iter_mut().zip(self.tensor.level_slice(i)) {
                        *n += s;
                    }
                }
                std::mem::swap(&mut self.acc, &mut self.next);
            }
            debug_assert_eq!(self.acc.len(), alphabet.pow(k as u32));
            for (s, a) in self.tensor.level_slice_mut(k).iter_mut().zip(&self.acc) {
                *s += a;
            }
        }
    }
}

/// Truncated signature of the time-augmented piecewise-linear interpolation.
pub fn signature_of_path(
    path: &SampledPath,
    level: usize,
) -> Result<SignatureState, SignatureError> {
    let mut state = SignatureState::new(path.dim(), level);
    let mut dw = vec![0.0; path.dim()];
    for i in 0..path.len() - 1 {
        let dt = path.increment(i, &mut dw);
        state.step(dt, &dw)?;
    }
    Ok(state)
}

/// Closed-form expected signature of time-augmented standard Brownian
/// motion at time `horizon`: exp⊗(T·(e₁ + ½ Σ_d e_{d+1}⊗e_{d+1})).
pub fn fawcett_expected_signature(
    horizon: f64,
    driver_dim: usize,
    level: usize,
) -> TruncatedTensor {
    let alphabet = driver_dim + 1;
    let mut generator = TruncatedTensor::zeros(alphabet, level);
    if level >= 1 {
        generator
            .set(&Word::letter(1), horizon)
            .expect("time letter is always valid");
    }
    if level >= 2 {
        for d in 0..driver_dim {
            let letter = d as u8 + 2;
            generator
                .set(&Word::new([letter, letter]), horizon / 2.0)
                .expect("driver letters lie in the alphabet");
        }
    }
    let mut total = TruncatedTensor::unit(alphabet, level);
    let mut term = TruncatedTensor::unit(alphabet, level);
    for n in 1..=level {
        term = term
            .concat(&generator, level)
            .expect("same alphabet")
            .scaled(1.0 / n as f64);
        total.axpy(1.0, &term).expect("same alphabet");
    }
    total
}

/// Coordinatewise running mean and variance (Welford), mergeable in a
/// fixed order.
#[derive(Clone, Debug)]
pub struct MomentAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(len: usize) -> Self {
        MomentAccumulator {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, sample: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }

    pub fn merge(&mut self, other: MomentAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standard error of the mean per coordinate (sample variance / n).
    pub fn stderr(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.count as f64;
        self.m2
            .iter()
            .map(|&s| (s.max(0.0) / (n - 1.0) / n).sqrt())
            .collect()
    }
}

/// Sample mean and standard error of the truncated signatures of `paths`.
pub fn mc_expected_signature(
    paths: &[SampledPath],
    level: usize,
    workers: Workers,
) -> Result<(TruncatedTensor, TruncatedTensor), SignatureError> {
    if paths.len() < 2 {
        return Err(SignatureError::TooFewPaths {
            needed: 2,
            got: paths.len(),
        });
    }
    let grid = paths[0].times();
    let dim = paths[0].dim();
    if let Some(i) = paths
        .iter()
        .position(|p| p.times() != grid || p.dim() != dim)
    {
        return Err(SignatureError::MismatchedGrids(i));
    }
    let alphabet = dim + 1;
    let len = crate::tensor::word_count(alphabet, level);
    let acc = chunked_fold(
        paths.len(),
        workers,
        || MomentAccumulator::new(len),
        |acc, i| {
            let sig = signature_of_path(&paths[i], level).expect("grid validated on construction");
            acc.push(sig.tensor().coeffs());
        },
        MomentAccumulator::merge,
    );
    Ok(moments_to_tensors(&acc, alphabet, level))
}

pub(crate) fn moments_to_tensors(
    acc: &MomentAccumulator,
    alphabet: usize,
    level: usize,
) -> (TruncatedTensor, TruncatedTensor) {
    (
        TruncatedTensor::from_coeffs(alphabet, level, acc.mean().to_vec()),
        TruncatedTensor::from_coeffs(alphabet, level, acc.stderr()),
    )
}
