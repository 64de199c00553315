//! Experiment configuration: a line-oriented `key = value` file with
//! `[problem]` and `[run]` sections (a TOML subset).
//!
//! ```text
//! task = "figure1"            # figure1 | speedup | coupling | stationary | predict | complexity
//! output_path = "out.csv"     # optional
//!
//! [problem]
//! loss = "logistic"           # quadratic | logistic
//! l2 = 0.1
//! target_condition = 0.1      # optional, quadratic only: picks l2 so that mu/L equals it
//! dim = 20
//! records_per_client = 200
//! informative_a = 2
//! informative_b = 10
//! seed_a = 1
//! seed_b = 2
//! noise_std = 10.0
//! class_sep = 1.0
//! feature_scale_min = 1.0     # column j is scaled by feature_scale_min^(j/(dim-1))
//! batch = 10                  # or "full" for exact gradients
//! solver_tolerance = 1e-12
//!
//! [run]
//! gamma = 0.05                # or gamma_times_l = 0.125 for gamma = 0.125 / L
//! local_steps = 100
//! rounds = 100
//! n_clients = [10, 100]
//! seeds = [0, 1, 2]
//! algorithms = ["scaffold", "fedavg"]
//! burn_in = 500               # optional, default ceil(16 / (gamma mu H))
//! samples = 20000
//! thinning = 1
//! epsilon = 0.1
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::chain::Algorithm;
use crate::error::{Error, Result};
use crate::objectives::{Batch, Loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Figure1,
    Speedup,
    Coupling,
    Stationary,
    Predict,
    Complexity,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Figure1,
        Task::Speedup,
        Task::Coupling,
        Task::Stationary,
        Task::Predict,
        Task::Complexity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Figure1 => "figure1",
            Task::Speedup => "speedup",
            Task::Coupling => "coupling",
            Task::Stationary => "stationary",
            Task::Predict => "predict",
            Task::Complexity => "complexity",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub loss: Loss,
    pub l2: f64,
    pub target_condition: Option<f64>,
    pub dim: usize,
    pub records_per_client: usize,
    pub informative_a: usize,
    pub informative_b: usize,
    pub seed_a: u64,
    pub seed_b: u64,
    pub noise_std: f64,
    pub class_sep: f64,
    pub feature_scale_min: f64,
    pub batch: Batch,
    pub solver_tolerance: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            loss: Loss::Logistic,
            l2: 0.1,
            target_condition: None,
            dim: 20,
            records_per_client: 200,
            informative_a: 2,
            informative_b: 10,
            seed_a: 1,
            seed_b: 2,
            noise_std: 10.0,
            class_sep: 1.0,
            feature_scale_min: 1.0,
            batch: Batch::Sampled(10),
            solver_tolerance: crate::optimum::DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Absolute(f64),
    /// γ = value / L.
    TimesInverseL(f64),
}

impl StepSize {
    pub fn resolve(&self, l_smooth: f64) -> f64 {
        match *self {
            StepSize::Absolute(g) => g,
            StepSize::TimesInverseL(k) => k / l_smooth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub step_size: StepSize,
    pub local_steps: usize,
    pub rounds: usize,
    pub n_clients: Vec<usize>,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    pub burn_in: Option<usize>,
    pub samples: usize,
    pub thinning: usize,
    pub epsilon: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            step_size: StepSize::Absolute(0.05),
            local_steps: 100,
            rounds: 100,
            n_clients: vec![10, 100],
            seeds: vec![0, 1, 2],
            algorithms: vec![Algorithm::Scaffold, Algorithm::FedAvg],
            burn_in: None,
            samples: 20_000,
            thinning: 1,
            epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub problem: ProblemSpec,
    pub run: RunSpec,
    pub output_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            problem: ProblemSpec::default(),
            run: RunSpec::default(),
            output_path: None,
        }
    }
}

/// Documented defaults, shown by `--help`.
pub const DEFAULTS_HELP: &str = "\
Config defaults (file format: `key = value` lines, `[problem]` and `[run]` sections):
  task                       required: figure1 | speedup | coupling | stationary | predict | complexity
  output_path                stdout
  [problem] loss             \"logistic\" (or \"quadratic\")
  [problem] l2               0.1
  [problem] target_condition unset (quadratic only: choose l2 so mu/L equals it)
  [problem] dim              20
  [problem] records_per_client 200
  [problem] informative_a/_b 2 / 10
  [problem] seed_a/_b        1 / 2
  [problem] noise_std        10.0 (regression target noise)
  [problem] class_sep        1.0 (classification class separation)
  [problem] feature_scale_min 1.0 (column j scaled by value^(j/(dim-1)))
  [problem] batch            10 (or \"full\" for exact gradients)
  [problem] solver_tolerance 1e-12
  [run] gamma                0.05 (alternatively gamma_times_l, meaning gamma = value / L)
  [run] local_steps          100
  [run] rounds               100
  [run] n_clients            [10, 100]
  [run] seeds                [0, 1, 2]
  [run] algorithms           [\"scaffold\", \"fedavg\"]
  [run] burn_in              ceil(16 / (gamma * mu * local_steps))
  [run] samples              20000
  [run] thinning             1
  [run] epsilon              0.1";

fn expect_float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::TypeMismatch {
            key: key.into(),
            expected: "number",
        }),
    }
}

fn expect_uint(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        Value::Integer(_) => Err(Error::Validation {
            key: key.into(),
            reason: "must be non-negative".into(),
        }),
        _ => Err(Error::TypeMismatch {
            key: key.into(),
            expected: "integer",
        }),
    }
}

fn expect_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::TypeMismatch {
        key: key.into(),
        expected: "string",
    })
}

fn expect_array<'a>(key: &str, v: &'a Value) -> Result<&'a [Value]> {
    match v {
        Value::Array(a) => Ok(a.as_slice()),
        _ => Err(Error::TypeMismatch {
            key: key.into(),
            expected: "array",
        }),
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::Validation {
        key: key.into(),
        reason: reason.into(),
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, format!("must be positive, got {v}")))
    }
}

fn at_least_one(key: &str, v: u64) -> Result<usize> {
    if v >= 1 {
        Ok(v as usize)
    } else {
        Err(invalid(key, "must be >= 1"))
    }
}

fn parse_problem(table: &Table) -> Result<ProblemSpec> {
    let mut p = ProblemSpec::default();
    for (k, v) in table {
        let key = format!("problem.{k}");
        let key = key.as_str();
        match k.as_str() {
            "loss" => p.loss = expect_str(key, v)?.parse().map_err(|_| invalid(key, "expected quadratic or logistic"))?,
            "l2" => {
                p.l2 = expect_float(key, v)?;
                if !(p.l2 >= 0.0) {
                    return Err(invalid(key, "must be >= 0"));
                }
            }
            "target_condition" => {
                let t = positive(key, expect_float(key, v)?)?;
                if t >= 1.0 {
                    return Err(invalid(key, "must be in (0, 1)"));
                }
                p.target_condition = Some(t);
            }
            "dim" => p.dim = at_least_one(key, expect_uint(key, v)?)?,
            "records_per_client" => p.records_per_client = at_least_one(key, expect_uint(key, v)?)?,
            "informative_a" => p.informative_a = at_least_one(key, expect_uint(key, v)?)?,
            "informative_b" => p.informative_b = at_least_one(key, expect_uint(key, v)?)?,
            "seed_a" => p.seed_a = expect_uint(key, v)?,
            "seed_b" => p.seed_b = expect_uint(key, v)?,
            "noise_std" => {
                p.noise_std = expect_float(key, v)?;
                if !(p.noise_std >= 0.0) {
                    return Err(invalid(key, "must be >= 0"));
                }
            }
            "class_sep" => p.class_sep = expect_float(key, v)?,
            "feature_scale_min" => p.feature_scale_min = positive(key, expect_float(key, v)?)?,
            "batch" => {
                p.batch = match v {
                    Value::String(s) if s == "full" => Batch::Full,
                    Value::String(_) => return Err(invalid(key, "expected a positive integer or \"full\"")),
                    other => Batch::Sampled(at_least_one(key, expect_uint(key, other)?)?),
                }
            }
            "solver_tolerance" => p.solver_tolerance = positive(key, expect_float(key, v)?)?,
            _ => return Err(Error::UnknownKey(key.into())),
        }
    }
    for (key, count) in [("problem.informative_a", p.informative_a), ("problem.informative_b", p.informative_b)] {
        if count > p.dim {
            return Err(invalid(key, format!("exceeds dim = {}", p.dim)));
        }
    }
    if p.target_condition.is_some() && p.loss != Loss::Quadratic {
        return Err(invalid("problem.target_condition", "only supported for the quadratic loss"));
    }
    Ok(p)
}

fn parse_run(table: &Table) -> Result<RunSpec> {
    let mut r = RunSpec::default();
    let mut gamma_seen = false;
    for (k, v) in table {
        let key = format!("run.{k}");
        let key = key.as_str();
        match k.as_str() {
            "gamma" | "gamma_times_l" => {
                if gamma_seen {
                    return Err(invalid(key, "set only one of gamma and gamma_times_l"));
                }
                gamma_seen = true;
                let g = positive(key, expect_float(key, v)?)?;
                r.step_size = if k == "gamma" {
                    StepSize::Absolute(g)
                } else {
                    StepSize::TimesInverseL(g)
                };
            }
            "local_steps" => r.local_steps = at_least_one(key, expect_uint(key, v)?)?,
            "rounds" => r.rounds = expect_uint(key, v)? as usize,
            "n_clients" => {
                r.n_clients = expect_array(key, v)?
                    .iter()
                    .map(|x| at_least_one(key, expect_uint(key, x)?))
                    .collect::<Result<_>>()?;
                if r.n_clients.is_empty() {
                    return Err(invalid(key, "must list at least one client count"));
                }
                if let Some(n) = r.n_clients.iter().find(|&&n| n % 2 != 0) {
                    return Err(invalid(key, format!("client counts must be even (two-block split), got {n}")));
                }
            }
            "seeds" => {
                r.seeds = expect_array(key, v)?.iter().map(|x| expect_uint(key, x)).collect::<Result<_>>()?;
                if r.seeds.is_empty() {
                    return Err(invalid(key, "must list at least one seed"));
                }
            }
            "algorithms" => {
                r.algorithms = expect_array(key, v)?
                    .iter()
                    .map(|x| expect_str(key, x)?.parse().map_err(|_| invalid(key, "expected scaffold or fedavg")))
                    .collect::<Result<_>>()?;
                if r.algorithms.is_empty() {
                    return Err(invalid(key, "must list at least one algorithm"));
                }
            }
            "burn_in" => r.burn_in = Some(expect_uint(key, v)? as usize),
            "samples" => r.samples = expect_uint(key, v)? as usize,
            "thinning" => r.thinning = at_least_one(key, expect_uint(key, v)?)?,
            "epsilon" => r.epsilon = positive(key, expect_float(key, v)?)?,
            _ => return Err(Error::UnknownKey(key.into())),
        }
    }
    Ok(r)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Syntax(e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")))?;
    let mut task = None;
    let mut problem = ProblemSpec::default();
    let mut run = RunSpec::default();
    let mut output_path = None;
    for (k, v) in &table {
        match k.as_str() {
            "task" => {
                let name = expect_str("task", v)?;
                if name.is_empty() {
                    return Err(invalid("task", "must not be empty"));
                }
                task = Some(Task::parse(name).ok_or_else(|| invalid("task", format!("unknown task `{name}`")))?);
            }
            "output_path" => output_path = Some(PathBuf::from(expect_str("output_path", v)?)),
            "problem" => match v {
                Value::Table(t) => problem = parse_problem(t)?,
                _ => {
                    return Err(Error::TypeMismatch {
                        key: "problem".into(),
                        expected: "section",
                    })
                }
            },
            "run" => match v {
                Value::Table(t) => run = parse_run(t)?,
                _ => {
                    return Err(Error::TypeMismatch {
                        key: "run".into(),
                        expected: "section",
                    })
                }
            },
            other => return Err(Error::UnknownKey(other.into())),
        }
    }
    let task = task.ok_or_else(|| Error::MissingKey("task".into()))?;
    Ok(ExperimentConfig {
        task,
        problem,
        run,
        output_path,
    })
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    parse_config_str(&text)
}

fn fmt_float(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn fmt_list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    format!("[{}]", items.iter().map(f).collect::<Vec<_>>().join(", "))
}

/// Renders every field, defaults included; parses back to the same config.
pub fn print_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let p = &cfg.problem;
    let r = &cfg.run;
    let _ = writeln!(out, "task = \"{}\"", cfg.task.name());
    if let Some(path) = &cfg.output_path {
        let _ = writeln!(out, "output_path = {:?}", path.display().to_string());
    }
    let _ = writeln!(out, "\n[problem]");
    let _ = writeln!(out, "loss = \"{}\"", p.loss.name());
    let _ = writeln!(out, "l2 = {}", fmt_float(p.l2));
    if let Some(t) = p.target_condition {
        let _ = writeln!(out, "target_condition = {}", fmt_float(t));
    }
    let _ = writeln!(out, "dim = {}", p.dim);
    let _ = writeln!(out, "records_per_client = {}", p.records_per_client);
    let _ = writeln!(out, "informative_a = {}", p.informative_a);
    let _ = writeln!(out, "informative_b = {}", p.informative_b);
    let _ = writeln!(out, "seed_a = {}", p.seed_a);
    let _ = writeln!(out, "seed_b = {}", p.seed_b);
    let _ = writeln!(out, "noise_std = {}", fmt_float(p.noise_std));
    let _ = writeln!(out, "class_sep = {}", fmt_float(p.class_sep));
    let _ = writeln!(out, "feature_scale_min = {}", fmt_float(p.feature_scale_min));
    match p.batch {
        Batch::Full => {
            let _ = writeln!(out, "batch = \"full\"");
        }
        Batch::Sampled(b) => {
            let _ = writeln!(out, "batch = {b}");
        }
    }
    let _ = writeln!(out, "solver_tolerance = {}", fmt_float(p.solver_tolerance));
    let _ = writeln!(out, "\n[run]");
    match r.step_size {
        StepSize::Absolute(g) => {
            let _ = writeln!(out, "gamma = {}", fmt_float(g));
        }
        StepSize::TimesInverseL(k) => {
            let _ = writeln!(out, "gamma_times_l = {}", fmt_float(k));
        }
    }
    let _ = writeln!(out, "local_steps = {}", r.local_steps);
    let _ = writeln!(out, "rounds = {}", r.rounds);
    let _ = writeln!(out, "n_clients = {}", fmt_list(&r.n_clients, |n| n.to_string()));
    let _ = writeln!(out, "seeds = {}", fmt_list(&r.seeds, |s| s.to_string()));
    let _ = writeln!(out, "algorithms = {}", fmt_list(&r.algorithms, |a| format!("\"{}\"", a.name())));
    if let Some(b) = r.burn_in {
        let _ = writeln!(out, "burn_in = {b}");
    }
    let _ = writeln!(out, "samples = {}", r.samples);
    let _ = writeln!(out, "thinning = {}", r.thinning);
    let _ = writeln!(out, "epsilon = {}", fmt_float(r.epsilon));
    out
}
