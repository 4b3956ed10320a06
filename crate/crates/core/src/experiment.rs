//! File-driven parameter sweeps: for every `(L, M)` pair build the truncated
//! cost, minimize it, and evaluate the resulting signature control by
//! Monte-Carlo against the Riccati benchmark when one exists.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{cost_level, ControlTensor, CostEvaluator, CostSpec, LqModel, ModelError};
use crate::optimizer::{
    extract_quadratic, minimize_quadratic, ControlBasis, OptimError, QuadraticForm, SolveMethod,
};
use crate::par::Workers;
use crate::signature::fawcett_expected_signature;
use crate::simulation::{
    estimate_against_reference, expected_signature_mc, riccati_solve, Control, DriverConfig,
    DriverKind, GeneratedPaths, PathGenerator, RiccatiSolution, Scheme, SignatureControl, SimError,
};
use crate::tensor::TruncatedTensor;

/// Salt deriving the expected-signature stream family from the run seed.
const SIGNATURE_SEED_SALT: u64 = 0x5167_5f45_5350;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub model: LqModel,
    #[serde(default)]
    pub cost: CostSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverSpec {
    pub kind: DriverKind,
    #[serde(default = "half")]
    pub hurst: f64,
    pub steps: usize,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum SignatureSource {
    #[default]
    Fawcett,
    Mc {
        n_sig_paths: usize,
    },
}

/// Experiment description. Relative paths are resolved against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<Problem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_file: Option<PathBuf>,
    pub driver: DriverSpec,
    #[serde(rename = "L_values")]
    pub l_values: Vec<usize>,
    #[serde(rename = "M_values")]
    pub m_values: Vec<usize>,
    pub n_paths: usize,
    #[serde(default)]
    pub expected_signature: SignatureSource,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Off by default so repeated runs produce identical files.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub dump_quadratic: bool,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid configuration:\n{}", format_issues(.0))]
    Invalid(Vec<Issue>),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
    #[error("L = {l}, M = {m}: {source}")]
    Optimization {
        l: usize,
        m: usize,
        source: OptimError,
    },
    #[error("L = {l}, M = {m}: {source}")]
    Simulation {
        l: usize,
        m: usize,
        source: SimError,
    },
    #[error(transparent)]
    Setup(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl RunError {
    /// 1 for configuration and I/O problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Output { .. } => 1,
            _ => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// A validation finding tied to a location in the config.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Issue {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

impl Issue {
    fn error(path: &str, message: impl Into<String>) -> Self {
        Issue {
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        }
    }

    fn warning(path: &str, message: impl Into<String>) -> Self {
        Issue {
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.path, self.message)
    }
}

fn format_issues(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

impl ExperimentConfig {
    /// Reads a config and inlines its problem file, so the returned value is
    /// self-contained.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(file) = cfg.problem_file.take() {
            let file = base.join(file);
            if cfg.problem.is_none() {
                cfg.problem = Some(read_json(&file)?);
            } else {
                return Err(ConfigError::Invalid(vec![Issue::error(
                    "problem_file",
                    "give either problem or problem_file, not both",
                )]));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn driver_config(&self, model: &LqModel) -> DriverConfig {
        DriverConfig {
            kind: self.driver.kind,
            hurst: if self.driver.kind == DriverKind::Brownian {
                0.5
            } else {
                self.driver.hurst
            },
            noise_dim: model.noise_dim,
            steps: self.driver.steps,
            horizon: model.horizon,
            seed: self.seed,
        }
    }

    /// First 16 hex digits of the SHA-256 of the config without its output
    /// location.
    pub fn hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.output_dir = PathBuf::new();
        let json = serde_json::to_string(&keyed).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// The `(L, M)` pairs in run order.
    pub fn sweep(&self) -> Vec<(usize, usize)> {
        self.l_values
            .iter()
            .flat_map(|&l| self.m_values.iter().map(move |&m| (l, m)))
            .collect()
    }

    fn problem(&self) -> Result<&Problem, ConfigError> {
        self.problem
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid(vec![Issue::error("problem", "no problem given")]))
    }
}

/// Every finding for `cfg`; errors block a run, warnings do not.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Issue> {
    let mut issues = Vec::new();
    match &cfg.problem {
        None => issues.push(Issue::error("problem", "no problem or problem_file given")),
        Some(p) => {
            if let Err(e) = p.model.validate() {
                issues.push(Issue::error("problem.model", e.to_string()));
            } else {
                match p.cost.normalized(p.model.state_dim, p.model.control_dim) {
                    Err(e) => issues.push(Issue::error("problem.cost", e.to_string())),
                    Ok(cost) => {
                        if let Err(e) = cost.check_definiteness(p.model.horizon, 101) {
                            let path = match &e {
                                ModelError::NotPositiveDefinite { .. } => "problem.cost.b",
                                ModelError::NotPositiveSemiDefinite { what, .. } if what == "E" => {
                                    "problem.cost.e"
                                }
                                _ => "problem.cost.a",
                            };
                            issues.push(Issue::error(path, e.to_string()));
                        }
                    }
                }
                let driver = cfg.driver_config(&p.model);
                if let Err(e) = driver.validate() {
                    issues.push(Issue::error("driver", e.to_string()));
                }
            }
        }
    }
    if cfg.l_values.is_empty() {
        issues.push(Issue::error("L_values", "empty sweep"));
    }
    if cfg.m_values.is_empty() {
        issues.push(Issue::error("M_values", "empty sweep"));
    }
    if cfg.n_paths < 2 {
        issues.push(Issue::error("n_paths", "at least two paths are required"));
    }
    if let SignatureSource::Mc { n_sig_paths } = cfg.expected_signature {
        if n_sig_paths < 2 {
            issues.push(Issue::error(
                "expected_signature.n_sig_paths",
                "at least two paths are required",
            ));
        }
    } else if cfg.driver.kind == DriverKind::Fbm {
        issues.push(Issue::error(
            "expected_signature",
            "the closed-form expected signature only holds for Brownian drivers",
        ));
    }
    for (l, m) in cfg.sweep() {
        if m >= l {
            issues.push(Issue::warning(
                "M_values",
                format!("M = {m} with L = {l}: overfit regime, cost typically increases once M reaches about L - 1"),
            ));
        }
    }
    issues
}

fn check(cfg: &ExperimentConfig) -> Result<Vec<Issue>, ConfigError> {
    let issues = validate(cfg);
    if issues.iter().any(|i| i.severity == Severity::Error) {
        return Err(ConfigError::Invalid(issues));
    }
    Ok(issues)
}

/// One `(L, M)` outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRow {
    pub run_id: String,
    pub driver: DriverKind,
    pub hurst: f64,
    pub horizon: f64,
    pub l: usize,
    pub m: usize,
    pub n_paths: usize,
    pub steps: usize,
    pub cost_mean: f64,
    pub cost_stderr: f64,
    pub dist_mean: Option<f64>,
    pub dist_stderr: Option<f64>,
    pub benchmark_cost: Option<f64>,
    pub flagged_paths: usize,
    pub wall_time_s: f64,
    /// Minimum of the truncated cost surrogate.
    pub surrogate_cost: f64,
    pub min_eigenvalue: f64,
    pub solve_method: String,
}

pub const CSV_HEADER: &str = "run_id,driver,H,T,L,M,n_paths,steps,cost_mean,cost_stderr,dist_mean,dist_stderr,benchmark_cost,flagged_paths,wall_time_s";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunRow {
    pub fn csv_line(&self) -> String {
        let driver = match self.driver {
            DriverKind::Brownian => "brownian",
            DriverKind::Fbm => "fbm",
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            driver,
            self.hurst,
            self.horizon,
            self.l,
            self.m,
            self.n_paths,
            self.steps,
            self.cost_mean,
            self.cost_stderr,
            opt(self.dist_mean),
            opt(self.dist_stderr),
            opt(self.benchmark_cost),
            self.flagged_paths,
            self.wall_time_s
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Benchmark {
    /// `V(0, x0)` from the Riccati equations.
    pub value: f64,
    /// Monte-Carlo cost of the Riccati feedback on the evaluation paths.
    pub mc_cost: Option<f64>,
    pub mc_stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub best: Option<RunRow>,
    pub benchmark: Option<Benchmark>,
    /// `best.cost_mean - benchmark.value`.
    pub benchmark_gap: Option<f64>,
    pub rows: Vec<RunRow>,
    pub warnings: Vec<String>,
}

/// Problem-level data shared by all `(L, M)` pairs of a run.
pub struct Prepared {
    pub problem: Problem,
    pub generator: PathGenerator,
    pub expected_signature: TruncatedTensor,
    pub riccati: Option<RiccatiSolution>,
}

/// Validates `cfg`, builds the driver and expected signature, and solves
/// the Riccati benchmark when the problem is scalar and Brownian.
pub fn prepare(
    cfg: &ExperimentConfig,
    workers: Workers,
) -> Result<(Prepared, Vec<Issue>), RunError> {
    let issues = check(cfg)?;
    let problem = cfg.problem()?.clone();
    let model = &problem.model;
    let generator = PathGenerator::new(&cfg.driver_config(model))?;
    let level = cfg
        .sweep()
        .into_iter()
        .map(|(l, m)| cost_level(l, m, &problem.cost))
        .max()
        .unwrap_or(0);
    let expected_signature = match cfg.expected_signature {
        SignatureSource::Fawcett => {
            fawcett_expected_signature(model.horizon, model.noise_dim, level)
        }
        SignatureSource::Mc { n_sig_paths } => {
            let sig_gen = PathGenerator::new(&generator.config().reseeded(SIGNATURE_SEED_SALT))?;
            expected_signature_mc(&sig_gen, n_sig_paths, level, workers)?.0
        }
    };
    let scalar = model.state_dim == 1 && model.control_dim == 1 && model.noise_dim == 1;
    let riccati = if scalar && cfg.driver.kind == DriverKind::Brownian {
        Some(riccati_solve(model, &problem.cost, cfg.driver.steps)?)
    } else {
        None
    };
    Ok((
        Prepared {
            problem,
            generator,
            expected_signature,
            riccati,
        },
        issues,
    ))
}

/// The minimizing control of the truncated problem at `(L, M)`.
pub struct Solved {
    pub control: ControlTensor,
    pub quadratic: QuadraticForm,
    pub value: f64,
    pub min_eigenvalue: f64,
    pub method: SolveMethod,
}

pub fn solve_truncated(
    prep: &Prepared,
    l: usize,
    m: usize,
    workers: Workers,
) -> Result<Solved, RunError> {
    let Problem { model, cost } = &prep.problem;
    let level = cost_level(l, m, cost);
    if prep.expected_signature.level() < level {
        return Err(ModelError::InsufficientLevel {
            have: prep.expected_signature.level(),
            need: level,
        }
        .into());
    }
    let es = prep.expected_signature.with_level(level);
    let evaluator = CostEvaluator::new(model, cost, l, level, es)?;
    let basis = ControlBasis::new(model.control_dim, model.alphabet(), m);
    let optim = |source| RunError::Optimization { l, m, source };
    let quadratic = extract_quadratic(|u| evaluator.evaluate(u), &basis, workers)
        .map_err(|e| optim(OptimError::Model(e)))?;
    let min = minimize_quadratic(&quadratic).map_err(optim)?;
    let control = basis.to_control_tensor(&min.v).map_err(optim)?;
    Ok(Solved {
        control,
        quadratic,
        value: min.value,
        min_eigenvalue: min.min_eigenvalue,
        method: min.method,
    })
}

/// Outcome of a full sweep.
pub struct RunReport {
    pub rows: Vec<RunRow>,
    pub summary: Summary,
    pub output_dir: PathBuf,
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|source| RunError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs the sweep and writes `results.csv`, `summary.json`, one tensor file
/// per control coordinate under `controls/`, and optionally the quadratic
/// forms under `quadratic/`. `on_row` sees each row as it completes.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    workers: Workers,
    mut on_row: impl FnMut(&RunRow),
) -> Result<RunReport, RunError> {
    let (prep, issues) = prepare(cfg, workers)?;
    let Problem { model, cost } = &prep.problem;
    let hash = cfg.hash();
    let out = &cfg.output_dir;
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|source| RunError::Output {
            path: p.to_path_buf(),
            source,
        })
    };
    mkdir(&out.join("controls"))?;
    if cfg.dump_quadratic {
        mkdir(&out.join("quadratic"))?;
    }

    let paths = GeneratedPaths {
        generator: &prep.generator,
        count: cfg.n_paths,
    };
    let scheme = Scheme::for_driver(cfg.driver.kind);
    let reference = prep.riccati.as_ref().map(|r| r as &dyn Control);
    let mut rows = Vec::new();
    let mut benchmark_mc = None;
    for (l, m) in cfg.sweep() {
        let start = Instant::now();
        let solved = solve_truncated(&prep, l, m, workers)?;
        let est = estimate_against_reference(
            model,
            cost,
            &SignatureControl(solved.control.clone()),
            reference,
            &paths,
            scheme,
            workers,
        )
        .map_err(|source| RunError::Simulation { l, m, source })?;
        if benchmark_mc.is_none() {
            benchmark_mc = est.reference_cost.clone();
        }
        for (k, coord) in solved.control.coords.iter().enumerate() {
            write(
                &out.join("controls")
                    .join(format!("L{l}_M{m}_u{}.txt", k + 1)),
                &coord.to_text(),
            )?;
        }
        if cfg.dump_quadratic {
            write(
                &out.join("quadratic").join(format!("L{l}_M{m}.csv")),
                &solved.quadratic.to_csv(),
            )?;
        }
        let row = RunRow {
            run_id: format!("{hash}-L{l}-M{m}"),
            driver: cfg.driver.kind,
            hurst: prep.generator.config().hurst,
            horizon: model.horizon,
            l,
            m,
            n_paths: cfg.n_paths,
            steps: cfg.driver.steps,
            cost_mean: est.cost.mean,
            cost_stderr: est.cost.stderr,
            dist_mean: est.distance.as_ref().map(|d| d.mean),
            dist_stderr: est.distance.as_ref().map(|d| d.stderr),
            benchmark_cost: prep.riccati.as_ref().map(|r| r.value(0.0, model.x0[0])),
            flagged_paths: est.cost.flagged,
            wall_time_s: if cfg.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
            surrogate_cost: solved.value,
            min_eigenvalue: solved.min_eigenvalue,
            solve_method: format!("{:?}", solved.method),
        };
        on_row(&row);
        rows.push(row);
    }

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    write(&out.join("results.csv"), &csv)?;

    let best = rows
        .iter()
        .min_by(|a, b| a.cost_mean.total_cmp(&b.cost_mean))
        .cloned();
    let benchmark = prep.riccati.as_ref().map(|r| Benchmark {
        value: r.value(0.0, model.x0[0]),
        mc_cost: benchmark_mc.as_ref().map(|e| e.mean),
        mc_stderr: benchmark_mc.as_ref().map(|e| e.stderr),
    });
    let summary = Summary {
        config_hash: hash,
        benchmark_gap: best
            .as_ref()
            .zip(benchmark.as_ref())
            .map(|(b, r)| b.cost_mean - r.value),
        best,
        benchmark,
        rows: rows.clone(),
        warnings: issues.iter().map(|i| i.to_string()).collect(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&out.join("summary.json"), &(json + "\n"))?;
    Ok(RunReport {
        rows,
        summary,
        output_dir: out.clone(),
    })
}

/// Text dump of coordinate `coord` (1-based) of the optimal control at `(L, M)`.
pub fn dump_control(
    cfg: &ExperimentConfig,
    l: usize,
    m: usize,
    coord: usize,
    workers: Workers,
) -> Result<String, RunError> {
    let mut single = cfg.clone();
    single.l_values = vec![l];
    single.m_values = vec![m];
    let k_dim = cfg.problem()?.model.control_dim;
    if coord == 0 || coord > k_dim {
        return Err(ConfigError::Invalid(vec![Issue::error(
            "coord",
            format!("control coordinate must lie in 1..={k_dim}, got {coord}"),
        )])
        .into());
    }
    let (prep, _) = prepare(&single, workers)?;
    let solved = solve_truncated(&prep, l, m, workers)?;
    Ok(solved.control.coords[coord - 1].to_text())
}
