//! Convergence studies: configuration, reference solutions, error and order
//! estimates, and the CSV format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::krylov::{KrylovConfig, KrylovError};
use crate::problems::{
    gs_default, gs_initial, gs_problem, oracle_semilinear, JacobianKind, Partitioning,
    ProblemError, GS_DESK_GRID, GS_PAPER_GRID, GS_TSPAN,
};
use crate::steppers::{integrate_fixed, EvalMode, SplitProblem, StepConfig, StepError, Stepper};
use crate::tableaux::{tableau, TableauError};

/// Exact CSV column header.
pub const CSV_HEADER: &str = "h,error_l2,observed_order,matvecs,krylov_dims,wall_ms";
/// Default cap on the Krylov dimension. Large steps on fine grids need
/// bases well beyond 100 vectors.
pub const DEFAULT_M_MAX: usize = 256;
/// Reference step is the smallest study step divided by this.
pub const REFERENCE_REFINEMENT: usize = 32;
pub const REFERENCE_TOL: f64 = 1e-13;
/// The two references must differ by less than this fraction of the
/// smallest study error.
pub const REFERENCE_GATE: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot read config file {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config file {path}: {source}")]
    ConfigJson {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Tableau(#[from] TableauError),
    #[error(transparent)]
    Krylov(#[from] KrylovError),
    #[error("reference solution failed: {0}")]
    Reference(#[source] StepError),
    #[error(
        "reference self-consistency gate failed: references differ by {difference:e}, \
         smallest study error is {smallest_error:e} (ratio {ratio:e} > {REFERENCE_GATE:e})"
    )]
    ReferenceGate {
        difference: f64,
        smallest_error: f64,
        ratio: f64,
    },
    #[error("every step size failed; first failure: {0}")]
    AllRowsFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: usize, message: String },
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_)
            | Self::ConfigFile { .. }
            | Self::ConfigJson { .. }
            | Self::Problem(_)
            | Self::Tableau(_)
            | Self::Krylov(_) => 2,
            Self::Reference(_) | Self::ReferenceGate { .. } | Self::AllRowsFailed(_) => 3,
            Self::Io(_) | Self::Csv { .. } => 1,
        }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemId {
    GrayScott,
    /// Random semilinear problem of dimension `grid`, drawn from `seed`.
    Oracle,
}

impl FromStr for ProblemId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gray-scott" | "grayscott" => Ok(Self::GrayScott),
            "oracle" => Ok(Self::Oracle),
            other => Err(config_err(format!("unknown problem '{other}'"))),
        }
    }
}

impl ProblemId {
    pub fn name(self) -> &'static str {
        match self {
            Self::GrayScott => "gray-scott",
            Self::Oracle => "oracle",
        }
    }
}

/// Stepper family: original or transformed single-operator form, or the
/// partitioned method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Orig,
    Tran,
    Part,
}

impl FromStr for Form {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orig" => Ok(Self::Orig),
            "tran" => Ok(Self::Tran),
            "part" => Ok(Self::Part),
            other => Err(config_err(format!("unknown form '{other}'"))),
        }
    }
}

impl Form {
    pub fn name(self) -> &'static str {
        match self {
            Self::Orig => "orig",
            Self::Tran => "tran",
            Self::Part => "part",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepList {
    /// h = (tf - t0)·2^{-j} for j in j0..=j1.
    Pow2 { j0: u32, j1: u32 },
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemId,
    pub grid: usize,
    pub partition: Partitioning,
    pub order: u32,
    pub form: Form,
    pub jacobian: JacobianKind,
    pub t0: f64,
    pub tf: f64,
    pub steps: StepList,
    pub krylov_tol: f64,
    pub m_max: usize,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Record wall times; with `false` the wall_ms column is 0 and the CSV
    /// is byte-for-byte reproducible.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemId::GrayScott,
            grid: GS_DESK_GRID,
            partition: Partitioning::None,
            order: 2,
            form: Form::Tran,
            jacobian: JacobianKind::Full,
            t0: 0.0,
            tf: GS_TSPAN,
            steps: StepList::Pow2 { j0: 1, j1: 6 },
            krylov_tol: 1e-12,
            m_max: DEFAULT_M_MAX,
            out: None,
            seed: 0,
            timing: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(2..=4).contains(&self.order) {
            return Err(config_err(format!("order must be 2, 3 or 4, got {}", self.order)));
        }
        match (self.form, self.partition) {
            (Form::Part, Partitioning::None) => {
                return Err(config_err("form part needs a partition other than none"))
            }
            (Form::Orig | Form::Tran, p) if p != Partitioning::None => {
                return Err(config_err(format!(
                    "form {} integrates the unsplit problem; partition must be none, got {}",
                    self.form.name(),
                    p.name()
                )))
            }
            _ => {}
        }
        if self.problem == ProblemId::Oracle && self.partition != Partitioning::None {
            return Err(config_err("the oracle problem has no partitions"));
        }
        if !(self.t0.is_finite() && self.tf.is_finite() && self.tf > self.t0) {
            return Err(config_err(format!(
                "time span must satisfy t0 < tf, got {}:{}",
                self.t0, self.tf
            )));
        }
        if self.grid == 0 {
            return Err(config_err("grid must be positive"));
        }
        KrylovConfig::new(self.krylov_tol, self.m_max)?;
        let hs = self.step_sizes()?;
        if hs.is_empty() {
            return Err(config_err("step list is empty"));
        }
        Ok(())
    }

    /// (h, number of steps) for every study row, h strictly decreasing.
    pub fn step_sizes(&self) -> Result<Vec<(f64, usize)>, HarnessError> {
        let span = self.tf - self.t0;
        let out: Vec<(f64, usize)> = match &self.steps {
            StepList::Pow2 { j0, j1 } => {
                if j0 > j1 || *j1 > 30 {
                    return Err(config_err(format!("invalid step exponents {j0}:{j1}")));
                }
                (*j0..=*j1)
                    .map(|j| (span / f64::from(1u32 << j), 1usize << j))
                    .collect()
            }
            StepList::Explicit(hs) => {
                let mut out = Vec::with_capacity(hs.len());
                for &h in hs {
                    if !(h > 0.0 && h.is_finite()) {
                        return Err(config_err(format!("step size must be positive, got {h}")));
                    }
                    let n = (span / h).round();
                    if n < 1.0 || ((span / n) - h).abs() > 1e-9 * h {
                        return Err(config_err(format!(
                            "step size {h} does not divide the time span {span}"
                        )));
                    }
                    out.push((span / n, n as usize));
                }
                out
            }
        };
        if out.windows(2).any(|w| w[1].0 >= w[0].0) {
            return Err(config_err("step sizes must be strictly decreasing"));
        }
        Ok(out)
    }

    fn step_config(&self, tol: f64) -> Result<StepConfig, HarnessError> {
        Ok(StepConfig {
            krylov: KrylovConfig::new(tol, self.m_max)?,
            mode: EvalMode::Fused,
        })
    }

    /// Key identifying the reference solution; independent of partition,
    /// method and form.
    fn reference_key(&self) -> Result<String, HarnessError> {
        let (h_min, _) = *self.step_sizes()?.last().expect("validated");
        Ok(format!(
            "{}:{}:{}:{:e}:{:e}:{:e}:{}",
            self.problem.name(),
            self.grid,
            self.seed,
            self.t0,
            self.tf,
            h_min,
            self.m_max
        ))
    }

    /// File-style metadata lines.
    pub fn metadata(&self) -> Vec<(String, String)> {
        let steps = match &self.steps {
            StepList::Pow2 { j0, j1 } => format!("pow2 {j0}:{j1}"),
            StepList::Explicit(hs) => hs.iter().map(|h| format!("{h:e}")).collect::<Vec<_>>().join(" "),
        };
        vec![
            ("problem".into(), self.problem.name().into()),
            ("grid".into(), self.grid.to_string()),
            ("partition".into(), self.partition.name().into()),
            ("order".into(), self.order.to_string()),
            ("form".into(), self.form.name().into()),
            ("jacobian".into(), self.jacobian.name().into()),
            ("tspan".into(), format!("{}:{}", self.t0, self.tf)),
            ("steps".into(), steps),
            ("krylov_tol".into(), format!("{:e}", self.krylov_tol)),
            ("m_max".into(), self.m_max.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("run_name".into(), self.run_name()),
        ]
    }

    /// exprks_orig_2, pexprks_tran_3, ...
    pub fn run_name(&self) -> String {
        match self.form {
            Form::Part => format!("pexprks_tran_{}_{}", self.order, self.partition.name()),
            f => format!("exprks_{}_{}_{}", f.name(), self.order, self.jacobian.name()),
        }
    }
}

/// Every run option as an optional value; used for config files and for
/// command-line overrides. Keys mirror the command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PartialConfig {
    pub problem: Option<String>,
    pub grid: Option<usize>,
    pub partition: Option<String>,
    pub order: Option<u32>,
    pub form: Option<String>,
    pub jacobian: Option<String>,
    pub tspan: Option<String>,
    pub steps_pow2: Option<String>,
    pub steps: Option<Vec<f64>>,
    pub krylov_tol: Option<f64>,
    pub m_max: Option<usize>,
    pub out: Option<PathBuf>,
    pub paper_scale: Option<bool>,
    pub seed: Option<u64>,
    pub timing: Option<bool>,
}

macro_rules! take_over {
    ($base:ident, $over:ident, $($f:ident),*) => {
        $( if $over.$f.is_some() { $base.$f = $over.$f; } )*
    };
}

fn parse_pair<T: FromStr>(s: &str, what: &str) -> Result<(T, T), HarnessError> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| config_err(format!("{what} must look like A:B, got '{s}'")))?;
    let parse = |x: &str| {
        x.trim()
            .parse::<T>()
            .map_err(|_| config_err(format!("invalid {what} bound '{x}'")))
    };
    Ok((parse(a)?, parse(b)?))
}

impl PartialConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::ConfigFile {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| HarnessError::ConfigJson {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|source| HarnessError::ConfigJson {
            path: PathBuf::from("<inline>"),
            source,
        })
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merged(mut self, over: PartialConfig) -> PartialConfig {
        let (pow2_only, list_only) = (
            over.steps_pow2.is_some() && over.steps.is_none(),
            over.steps.is_some() && over.steps_pow2.is_none(),
        );
        take_over!(
            self, over, problem, grid, partition, order, form, jacobian, tspan, steps_pow2,
            steps, krylov_tol, m_max, out, paper_scale, seed, timing
        );
        if pow2_only {
            self.steps = None;
        }
        if list_only {
            self.steps_pow2 = None;
        }
        self
    }

    pub fn resolve(self) -> Result<RunConfig, HarnessError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.problem {
            cfg.problem = p.parse()?;
        }
        if self.paper_scale == Some(true) {
            cfg.grid = GS_PAPER_GRID;
        }
        if let Some(g) = self.grid {
            cfg.grid = g;
        }
        if let Some(p) = &self.partition {
            cfg.partition = p.parse()?;
        }
        if let Some(o) = self.order {
            cfg.order = o;
        }
        cfg.form = match &self.form {
            Some(f) => f.parse()?,
            None if cfg.partition != Partitioning::None => Form::Part,
            None => Form::Tran,
        };
        if let Some(j) = &self.jacobian {
            cfg.jacobian = j.parse()?;
        }
        if let Some(t) = &self.tspan {
            (cfg.t0, cfg.tf) = parse_pair(t, "tspan")?;
        }
        match (&self.steps_pow2, &self.steps) {
            (Some(_), Some(_)) => return Err(config_err("give either steps-pow2 or steps, not both")),
            (Some(p), None) => {
                let (j0, j1) = parse_pair(p, "steps-pow2")?;
                cfg.steps = StepList::Pow2 { j0, j1 };
            }
            (None, Some(hs)) => cfg.steps = StepList::Explicit(hs.clone()),
            (None, None) => {}
        }
        if let Some(t) = self.krylov_tol {
            cfg.krylov_tol = t;
        }
        if let Some(m) = self.m_max {
            cfg.m_max = m;
        }
        cfg.out = self.out;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.timing {
            cfg.timing = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    /// Discrete L2 error ‖u - u_ref‖₂/√N; `None` when the run failed.
    pub error_l2: Option<f64>,
    pub observed_order: Option<f64>,
    pub matvecs: usize,
    pub krylov_dims: usize,
    pub wall_ms: f64,
    pub failure: Option<String>,
}

/// p̂_i = log(e_{i-1}/e_i) / log(h_{i-1}/h_i); log2 of the error ratio for
/// halved steps. `None` where either error is missing or non-positive.
pub fn estimate_order(rows: &mut [ConvergenceRow]) {
    if let Some(first) = rows.first_mut() {
        first.observed_order = None;
    }
    for i in 1..rows.len() {
        let order = match (rows[i - 1].error_l2, rows[i].error_l2) {
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 => {
                Some((a / b).ln() / (rows[i - 1].h / rows[i].h).ln())
            }
            _ => None,
        };
        rows[i].observed_order = order;
    }
}

/// Orders from bare error lists with step halving.
pub fn orders_from_errors(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[derive(Debug, Clone)]
pub struct Reference {
    pub state: Vec<f64>,
    pub h_ref: f64,
    /// Discrete L2 distance between the h_ref and 2·h_ref solutions.
    pub difference: f64,
}

/// Shares reference solutions between studies on the same problem.
#[derive(Debug, Default, Clone)]
pub struct ReferenceCache {
    inner: Arc<Mutex<HashMap<String, Arc<Reference>>>>,
}

impl ReferenceCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len().max(1) as f64).sqrt()
}

/// Problem, initial state and stepper described by a configuration.
pub fn build_run(cfg: &RunConfig) -> Result<(SplitProblem, Vec<f64>, Stepper), HarnessError> {
    let t = tableau(cfg.order)?;
    let (prob, u0) = build_problem(cfg, cfg.partition, cfg.jacobian)?;
    let stepper = match cfg.form {
        Form::Orig => Stepper::original(t),
        Form::Tran => Stepper::transformed(&t)?,
        Form::Part => Stepper::partitioned(&t)?,
    };
    Ok((prob, u0, stepper))
}

fn build_problem(
    cfg: &RunConfig,
    partition: Partitioning,
    jacobian: JacobianKind,
) -> Result<(SplitProblem, Vec<f64>), HarnessError> {
    match cfg.problem {
        ProblemId::GrayScott => {
            let m = gs_default(cfg.grid);
            Ok((gs_problem(&m, partition, jacobian)?, gs_initial(&m)))
        }
        ProblemId::Oracle => {
            let o = oracle_semilinear(cfg.grid, cfg.seed);
            Ok((o.problem(), o.u0.clone()))
        }
    }
}

/// Order-4 transformed method with the full Jacobian at h_ref = (smallest
/// study step)/32 and Krylov tolerance 1e-13, plus the same at 2·h_ref for
/// the self-consistency check.
pub fn reference_solution(cfg: &RunConfig) -> Result<Reference, HarnessError> {
    let (h_min, n_min) = *cfg
        .step_sizes()?
        .last()
        .ok_or_else(|| config_err("step list is empty"))?;
    let n = n_min * REFERENCE_REFINEMENT;
    let (prob, u0) = build_problem(cfg, Partitioning::None, JacobianKind::Full)?;
    let stepper = Stepper::transformed(&tableau(4)?)?;
    let scfg = cfg.step_config(REFERENCE_TOL)?;
    let fine = integrate_fixed(&stepper, &prob, &u0, cfg.t0, cfg.tf, n, &scfg)
        .map_err(HarnessError::Reference)?;
    let coarse = integrate_fixed(&stepper, &prob, &u0, cfg.t0, cfg.tf, n / 2, &scfg)
        .map_err(HarnessError::Reference)?;
    Ok(Reference {
        difference: l2_distance(&fine.state, &coarse.state),
        state: fine.state,
        h_ref: h_min / REFERENCE_REFINEMENT as f64,
    })
}

#[derive(Debug, Clone)]
pub struct Study {
    pub config: RunConfig,
    pub rows: Vec<ConvergenceRow>,
    pub reference: Arc<Reference>,
    /// Reference difference over the smallest study error.
    pub gate_ratio: f64,
}

impl Study {
    pub fn metadata(&self) -> Vec<(String, String)> {
        let mut m = self.config.metadata();
        m.push(("reference_h".into(), format!("{:e}", self.reference.h_ref)));
        m.push((
            "reference_difference".into(),
            format!("{:e}", self.reference.difference),
        ));
        m.push(("reference_gate_ratio".into(), format!("{:e}", self.gate_ratio)));
        for r in &self.rows {
            if let Some(f) = &r.failure {
                m.push((format!("failed h={:e}", r.h), f.clone()));
            }
        }
        m
    }

    /// Mean of the last `k` observed orders, if all are present.
    pub fn tail_order(&self, k: usize) -> Option<f64> {
        if self.rows.len() < k {
            return None;
        }
        let tail = &self.rows[self.rows.len() - k..];
        let orders: Option<Vec<f64>> = tail.iter().map(|r| r.observed_order).collect();
        orders.map(|o| o.iter().sum::<f64>() / k as f64)
    }
}

pub fn run_convergence_study(cfg: &RunConfig) -> Result<Study, HarnessError> {
    run_convergence_study_cached(cfg, &ReferenceCache::new())
}

/// Computes (or reuses) the reference, integrates once per step size and
/// fills the rows. Failed step sizes are recorded in their row.
pub fn run_convergence_study_cached(
    cfg: &RunConfig,
    cache: &ReferenceCache,
) -> Result<Study, HarnessError> {
    cfg.validate()?;
    let key = cfg.reference_key()?;
    let cached = cache.inner.lock().expect("cache lock").get(&key).cloned();
    let reference = match cached {
        Some(r) => r,
        None => {
            let r = Arc::new(reference_solution(cfg)?);
            cache
                .inner
                .lock()
                .expect("cache lock")
                .insert(key, r.clone());
            r
        }
    };

    let (prob, u0, stepper) = build_run(cfg)?;
    let scfg = cfg.step_config(cfg.krylov_tol)?;
    let mut rows = Vec::new();
    for (h, n) in cfg.step_sizes()? {
        let start = Instant::now();
        let result = integrate_fixed(&stepper, &prob, &u0, cfg.t0, cfg.tf, n, &scfg);
        let wall_ms = if cfg.timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        rows.push(match result {
            Ok(r) => ConvergenceRow {
                h,
                error_l2: Some(l2_distance(&r.state, &reference.state)),
                observed_order: None,
                matvecs: r.matvecs,
                krylov_dims: r.krylov_dims,
                wall_ms,
                failure: None,
            },
            Err(e) => ConvergenceRow {
                h,
                error_l2: None,
                observed_order: None,
                matvecs: 0,
                krylov_dims: 0,
                wall_ms,
                failure: Some(e.to_string()),
            },
        });
    }
    estimate_order(&mut rows);

    let smallest = rows.iter().rev().find_map(|r| r.error_l2);
    let Some(smallest) = smallest else {
        let first = rows
            .iter()
            .find_map(|r| r.failure.clone())
            .unwrap_or_default();
        return Err(HarnessError::AllRowsFailed(first));
    };
    let gate_ratio = if smallest > 0.0 {
        reference.difference / smallest
    } else if reference.difference == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    if !(gate_ratio < REFERENCE_GATE) {
        return Err(HarnessError::ReferenceGate {
            difference: reference.difference,
            smallest_error: smallest,
            ratio: gate_ratio,
        });
    }
    Ok(Study {
        config: cfg.clone(),
        rows,
        reference,
        gate_ratio,
    })
}

/// One CSV line; the column names are [`CSV_HEADER`].
#[derive(Serialize, Deserialize)]
struct CsvRecord {
    h: f64,
    error_l2: Option<f64>,
    observed_order: Option<f64>,
    matvecs: usize,
    krylov_dims: usize,
    wall_ms: f64,
}

fn csv_error(e: csv::Error) -> HarnessError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    HarnessError::Csv {
        line,
        message: e.to_string(),
    }
}

/// CSV text: `# key = value` metadata lines, the header, then one line per
/// row. Missing values are empty fields.
pub fn format_csv(rows: &[ConvergenceRow], metadata: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in metadata {
        let v = v.replace('\n', " ");
        let _ = writeln!(out, "# {k} = {v}");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRecord {
            h: r.h,
            error_l2: r.error_l2,
            observed_order: r.observed_order,
            matvecs: r.matvecs,
            krylov_dims: r.krylov_dims,
            wall_ms: r.wall_ms,
        })
        .expect("in-memory CSV write");
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(',')).expect("in-memory CSV write");
    }
    let body = w.into_inner().expect("in-memory CSV flush");
    out.push_str(&String::from_utf8(body).expect("CSV output is UTF-8"));
    out
}

pub fn emit_csv(
    rows: &[ConvergenceRow],
    metadata: &[(String, String)],
    path: &Path,
) -> Result<(), HarnessError> {
    std::fs::write(path, format_csv(rows, metadata))?;
    Ok(())
}

/// Inverse of [`format_csv`]. Failure messages are not part of the rows and
/// come back as `None`.
pub fn parse_csv(text: &str) -> Result<(Vec<(String, String)>, Vec<ConvergenceRow>), HarnessError> {
    let metadata = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .map(|rest| {
            let rest = rest.trim_start();
            match rest.split_once(" = ") {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => (rest.to_string(), String::new()),
            }
        })
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(HarnessError::Csv {
            line: header.position().map_or(0, |p| p.line() as usize),
            message: format!("expected header '{CSV_HEADER}'"),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize::<CsvRecord>() {
        let r = rec.map_err(csv_error)?;
        rows.push(ConvergenceRow {
            h: r.h,
            error_l2: r.error_l2,
            observed_order: r.observed_order,
            matvecs: r.matvecs,
            krylov_dims: r.krylov_dims,
            wall_ms: r.wall_ms,
            failure: None,
        });
    }
    Ok((metadata, rows))
}
