//! TOML experiment configuration.
//!
//! ```toml
//! solvers = ["ddim", "dpmpp2m", "evodiff"]   # or: solver = "ddim"
//! steps = [5, 10, 20]                        # or: nfe = [10, 20]
//! seeds = [1, 2, 3]                          # or: seed = 1
//! dist = "anisotropic"                       # anisotropic | standard | four_mode | custom
//!                                            # (gaussian = anisotropic, gmm = four_mode)
//! dim = 2
//! schedule = "vp_linear"                     # vp_linear | vp_cosine | edm
//! beta0 = 0.1                                # vp_linear only, with beta1
//! grid = "logsnr"                            # logsnr | uniform | karras
//! metrics = ["sliced_wasserstein", "frechet", "mean_error"]
//! samples = 1000
//! output = "runs/demo"
//!
//! [evodiff]
//! mu = 0.5
//! reuse_probe = true
//! ```
//!
//! `dist = "custom"` reads `[[component]]` tables with `weight`, `mean`, `cov_diag`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Spanned, Value};

use crate::oracle::{Component, DataDistribution};
use crate::schedule::{GridPolicy, NoiseSchedule, RStrategy};
use crate::solver::{EvoDiffConfig, GradientWeight, Interp, ReParams, SolverKind, ZetaPolicy};
use crate::varopt::{OptFormula, ZetaMap};

/// Names accepted by `solver`/`solvers`.
pub const SOLVER_NAMES: &[&str] = &[
    "ddim",
    "fd_single",
    "re_midpoint",
    "re_snr",
    "heun",
    "dpm2s",
    "plain_kappa",
    "dpmpp2m",
    "remulti_l",
    "remulti_s",
    "evodiff",
];

/// Metrics computed per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Sliced 2-Wasserstein distance to exact data samples.
    SlicedWasserstein,
    /// Fréchet distance between the sample Gaussian fit and the exact data moments.
    Frechet,
    /// Distance between the sample mean and the exact data mean.
    MeanError,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::SlicedWasserstein => "sliced_wasserstein",
            Self::Frechet => "frechet",
            Self::MeanError => "mean_error",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::SlicedWasserstein, Self::Frechet, Self::MeanError]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

/// Step counts, given directly or as NFE budgets resolved per solver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Steps(Vec<usize>),
    Nfe(Vec<usize>),
}

impl Budget {
    /// Step counts for one solver.
    pub fn resolve(&self, kind: &SolverKind) -> Vec<usize> {
        match self {
            Self::Steps(s) => s.clone(),
            Self::Nfe(b) => b.iter().map(|&n| kind.steps_for_nfe(n)).collect(),
        }
    }
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub solvers: Vec<SolverKind>,
    pub budget: Budget,
    pub seeds: Vec<u64>,
    pub dist: String,
    pub distribution: DataDistribution,
    pub schedule: NoiseSchedule,
    pub grid: GridPolicy,
    pub t_start: f64,
    pub t_end: f64,
    pub metrics: Vec<Metric>,
    /// Generated samples per run.
    pub samples: usize,
    /// Exact data samples for sliced Wasserstein.
    pub reference_samples: usize,
    pub projections: usize,
    /// Write per-step records for the first sample of each run.
    pub step_records: bool,
    /// Write per-step variance trajectories (single-Gaussian data only).
    pub trajectory: bool,
    /// Not part of the config hash.
    #[serde(skip)]
    pub output: PathBuf,
}

/// One problem found while parsing or validating.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// 1-based line, when known.
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.field {
            write!(f, "`{k}`: ")?;
        }
        f.write_str(&self.message)
    }
}

/// All issues in a config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.issues.iter().map(|i| i.to_string()).collect();
        f.write_str(&lines.join("\n"))
    }
}

impl std::error::Error for ConfigError {}

const KNOWN_KEYS: &[&str] = &[
    "solver",
    "solvers",
    "steps",
    "nfe",
    "seed",
    "seeds",
    "dist",
    "dim",
    "schedule",
    "grid",
    "rho",
    "beta0",
    "beta1",
    "t_start",
    "t_end",
    "mu",
    "r_strategy",
    "reuse_probe",
    "metrics",
    "samples",
    "reference_samples",
    "projections",
    "step_records",
    "trajectory",
    "output",
    "evodiff",
    "component",
];

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Parser {
    map: BTreeMap<String, (usize, Value)>,
    /// Lines of `[evodiff]` settings given at top level.
    moved: BTreeMap<String, usize>,
    issues: Vec<ConfigIssue>,
}

impl Parser {
    fn line(&self, key: &str) -> Option<usize> {
        self.map
            .get(key)
            .map(|(l, _)| *l)
            .or_else(|| self.moved.get(key).copied())
    }

    fn issue(&mut self, key: &str, message: impl Into<String>) {
        let line = self.line(key);
        self.issues.push(ConfigIssue {
            line,
            field: Some(key.to_string()),
            message: message.into(),
        });
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.map.get(key).map(|(_, v)| v)
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.get(key)? {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.issue(key, "expected a string");
                None
            }
        }
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        match self.get(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.issue(key, "expected a number");
                None
            }
        }
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        match self.get(key)? {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.issue(key, "expected true or false");
                None
            }
        }
    }

    fn uint(&mut self, key: &str) -> Option<u64> {
        match self.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => {
                self.issue(key, "expected a non-negative integer");
                None
            }
        }
    }

    /// A scalar or a list of scalars.
    fn list<T>(&mut self, key: &str, item: impl Fn(&Value) -> Option<T>) -> Option<Vec<T>> {
        let v = self.get(key)?.clone();
        let items = match &v {
            Value::Array(a) => a.iter().map(&item).collect::<Option<Vec<T>>>(),
            other => item(other).map(|x| vec![x]),
        };
        if items.is_none() {
            self.issue(key, "list has an element of the wrong type");
        }
        items
    }

    /// Exactly one of a singular/plural key pair.
    fn one_of<'k>(&mut self, singular: &'k str, plural: &'k str) -> Option<&'k str> {
        match (self.map.contains_key(singular), self.map.contains_key(plural)) {
            (true, true) => {
                self.issue(plural, format!("set only one of `{singular}` and `{plural}`"));
                None
            }
            (true, false) => Some(singular),
            (false, true) => Some(plural),
            (false, false) => {
                self.issues.push(ConfigIssue {
                    line: None,
                    field: Some(singular.to_string()),
                    message: "missing".into(),
                });
                None
            }
        }
    }
}

fn as_uint(v: &Value) -> Option<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Some(*i as u64),
        _ => None,
    }
}

fn as_str(v: &Value) -> Option<String> {
    v.as_str().map(str::to_string)
}

fn parse_r_strategy(name: &str, beta: Option<f64>) -> Option<RStrategy> {
    Some(match name {
        "logsnr" => RStrategy::LogSnr,
        "normvar" => RStrategy::NormVar,
        "arctan" => RStrategy::ArcTan,
        "refined" => RStrategy::Refined,
        "confidence" => RStrategy::Confidence {
            beta: beta.unwrap_or(1.0),
        },
        _ => return None,
    })
}

fn parse_formula(name: &str) -> Option<OptFormula> {
    match name {
        "literal" => Some(OptFormula::Literal),
        "analytic" => Some(OptFormula::AnalyticMin),
        _ => None,
    }
}

fn evodiff_config(p: &mut Parser) -> EvoDiffConfig {
    let mut cfg = EvoDiffConfig::default();
    let mut table: BTreeMap<String, Value> = BTreeMap::new();
    match p.get("evodiff").cloned() {
        Some(Value::Table(t)) => table.extend(t),
        Some(_) => p.issue("evodiff", "expected a table"),
        None => {}
    }
    for key in ["mu", "r_strategy", "reuse_probe"] {
        if let Some((line, v)) = p.map.get(key).cloned() {
            if table.contains_key(key) {
                p.issue(key, "also set in [evodiff]");
            }
            table.insert(key.to_string(), v);
            p.moved.insert(format!("evodiff.{key}"), line);
        }
    }
    let beta = table
        .get("beta")
        .and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)));
    for (key, v) in &table {
        let field = format!("evodiff.{key}");
        let ok = match key.as_str() {
            "mu" => match v.as_float().or(v.as_integer().map(|i| i as f64)) {
                Some(mu) if mu.is_finite() => {
                    cfg.mu = mu;
                    true
                }
                _ => false,
            },
            "beta" => beta.is_some_and(|b| b > 0.0),
            "r_strategy" => match v.as_str().and_then(|s| parse_r_strategy(s, beta)) {
                Some(r) => {
                    cfg.r_strategy = r;
                    true
                }
                None => false,
            },
            "reuse_probe" => match v.as_bool() {
                Some(b) => {
                    cfg.reuse_probe = b;
                    true
                }
                None => false,
            },
            "zeta_formula" | "eta_formula" => match v.as_str().and_then(parse_formula) {
                Some(f) => {
                    if key == "zeta_formula" {
                        cfg.zeta_formula = f;
                    } else {
                        cfg.eta_formula = f;
                    }
                    true
                }
                None => false,
            },
            "zeta_map" => match v.as_str() {
                Some("plain") => {
                    cfg.zeta_map = ZetaMap::Plain;
                    true
                }
                Some("sigma_scaled") => {
                    cfg.zeta_map = ZetaMap::SigmaScaled;
                    true
                }
                _ => false,
            },
            "weight" => match v.as_str() {
                Some("balanced") => {
                    cfg.weight = GradientWeight::Balanced;
                    true
                }
                Some("literal") => {
                    cfg.weight = GradientWeight::Literal;
                    true
                }
                _ => false,
            },
            _ => {
                let line = p.line("evodiff");
                p.issues.push(ConfigIssue {
                    line,
                    field: Some(field),
                    message: "unknown key".into(),
                });
                continue;
            }
        };
        if !ok {
            let line = p.line(&field).or_else(|| p.line("evodiff"));
            p.issues.push(ConfigIssue {
                line,
                field: Some(field),
                message: format!("invalid value {v}"),
            });
        }
    }
    cfg
}

fn solver_from_name(name: &str, evo: EvoDiffConfig) -> Option<SolverKind> {
    Some(match name {
        "ddim" => SolverKind::Ddim,
        "fd_single" => SolverKind::FdSingle { r: 1.0 },
        "re_midpoint" => SolverKind::ReSingle {
            params: ReParams::Midpoint,
        },
        "re_snr" => SolverKind::ReSingle {
            params: ReParams::SnrBalanced,
        },
        "heun" => SolverKind::HeunEdm,
        "dpm2s" => SolverKind::DpmSolver2S { r1: 0.5 },
        "plain_kappa" => SolverKind::plain_kappa(),
        "dpmpp2m" => SolverKind::dpmpp2m(),
        "remulti_l" => SolverKind::remulti(Interp::ExplicitL, ZetaPolicy::VarianceRatio),
        "remulti_s" => SolverKind::remulti(Interp::ImplicitS, ZetaPolicy::VarianceRatio),
        "evodiff" => SolverKind::EvoDiff { config: evo },
        _ => return None,
    })
}

fn distribution(p: &mut Parser, dist: &str, dim: usize) -> Option<DataDistribution> {
    let has_components = p.map.contains_key("component");
    if has_components && dist != "custom" {
        p.issue("component", "component tables need dist = \"custom\"");
    }
    let built = match dist {
        "anisotropic" | "gaussian" => DataDistribution::anisotropic(dim),
        "standard" => DataDistribution::standard(dim),
        "four_mode" | "gmm" => {
            if dim != 2 {
                p.issue("dim", "four_mode data is two-dimensional");
                return None;
            }
            Ok(DataDistribution::four_mode())
        }
        "custom" => {
            let Some(Value::Array(raw)) = p.get("component").cloned() else {
                p.issue("dist", "custom data needs [[component]] tables");
                return None;
            };
            let comps: std::result::Result<Vec<Component>, _> = raw.into_iter().map(|v| v.try_into()).collect();
            let comps = match comps {
                Ok(c) => c,
                Err(e) => {
                    p.issue("component", format!("bad component: {e}"));
                    return None;
                }
            };
            if comps.iter().any(|c| c.mean.len() != dim) {
                p.issue("component", format!("component dimension differs from dim = {dim}"));
                return None;
            }
            DataDistribution::mixture(comps)
        }
        other => {
            p.issue(
                "dist",
                format!("unknown distribution `{other}` (anisotropic, gaussian, standard, four_mode, gmm, custom)"),
            );
            return None;
        }
    };
    match built {
        Ok(d) => Some(d),
        Err(e) => {
            p.issue("dist", e.to_string());
            None
        }
    }
}

/// Parse and validate a config. All issues are reported together.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: BTreeMap<Spanned<String>, Spanned<Value>> = toml::from_str(text).map_err(|e| ConfigError {
        issues: vec![ConfigIssue {
            line: e.span().map(|s| line_of(text, s.start)),
            field: None,
            message: e.message().trim().to_string(),
        }],
    })?;
    let mut p = Parser {
        map: raw
            .into_iter()
            .map(|(k, v)| {
                let line = line_of(text, k.span().start);
                (k.into_inner(), (line, v.into_inner()))
            })
            .collect(),
        moved: BTreeMap::new(),
        issues: Vec::new(),
    };
    let unknown: Vec<String> = p
        .map
        .keys()
        .filter(|k| !KNOWN_KEYS.contains(&k.as_str()))
        .cloned()
        .collect();
    for k in unknown {
        p.issue(&k, "unknown key");
    }

    let evo = evodiff_config(&mut p);
    let solvers = p.one_of("solver", "solvers").and_then(|key| {
        let names = p.list(key, as_str)?;
        if names.is_empty() {
            p.issue(key, "needs at least one solver");
            return None;
        }
        let mut kinds = Vec::new();
        for n in names {
            match solver_from_name(&n, evo) {
                Some(k) => kinds.push(k),
                None => p.issue(
                    key,
                    format!("unknown solver `{n}` (known: {})", SOLVER_NAMES.join(", ")),
                ),
            }
        }
        Some(kinds)
    });
    let budget = p.one_of("steps", "nfe").and_then(|key| {
        let vals: Vec<usize> = p.list(key, as_uint)?.into_iter().map(|v| v as usize).collect();
        if vals.is_empty() || vals.contains(&0) {
            p.issue(key, "every entry needs N >= 1");
            return None;
        }
        Some(if key == "steps" {
            Budget::Steps(vals)
        } else {
            Budget::Nfe(vals)
        })
    });
    let seeds = p.one_of("seed", "seeds").and_then(|key| {
        let s = p.list(key, as_uint)?;
        if s.is_empty() {
            p.issue(key, "needs at least one seed");
            return None;
        }
        Some(s)
    });

    let dim = match p.uint("dim") {
        Some(0) => {
            p.issue("dim", "d must be >= 1");
            None
        }
        Some(d) => Some(d as usize),
        None if p.map.contains_key("dim") => None,
        None => Some(2),
    };
    let dist = p.string("dist").unwrap_or_else(|| "anisotropic".into());
    let distribution = dim.and_then(|d| distribution(&mut p, &dist, d));

    let beta0 = p.float("beta0");
    let beta1 = p.float("beta1");
    let schedule_name = p.string("schedule").unwrap_or_else(|| "vp_linear".into());
    if schedule_name != "vp_linear" && (beta0.is_some() || beta1.is_some()) {
        p.issue("schedule", "beta0/beta1 only apply to vp_linear");
    }
    let schedule = match schedule_name.as_str() {
        "vp_linear" => {
            let s = NoiseSchedule::VpLinear {
                beta0: beta0.unwrap_or(0.1),
                beta1: beta1.unwrap_or(20.0),
            };
            match s.validate() {
                Ok(()) => Some(s),
                Err(e) => {
                    p.issue("beta1", e.to_string());
                    None
                }
            }
        }
        "vp_cosine" => Some(NoiseSchedule::VpCosine),
        "edm" => Some(NoiseSchedule::edm()),
        other => {
            p.issue(
                "schedule",
                format!("unknown schedule `{other}` (vp_linear, vp_cosine, edm)"),
            );
            None
        }
    };
    let rho = p.float("rho");
    let grid = match p.string("grid").as_deref().unwrap_or("logsnr") {
        "logsnr" => Some(GridPolicy::LogSnrUniform),
        "uniform" => Some(GridPolicy::Uniform),
        "karras" => match rho.unwrap_or(7.0) {
            r if r > 0.0 => Some(GridPolicy::EdmKarras { rho: r }),
            _ => {
                p.issue("rho", "rho must be positive");
                None
            }
        },
        other => {
            p.issue("grid", format!("unknown grid `{other}` (logsnr, uniform, karras)"));
            None
        }
    };
    let span = schedule.as_ref().map(|s| s.default_span());
    let t_start = p.float("t_start").or(span.map(|s| s.0));
    let t_end = p.float("t_end").or(span.map(|s| s.1));
    if let (Some(s), Some(a), Some(b)) = (&schedule, t_start, t_end) {
        if !(a > b && b > 0.0) {
            p.issue("t_end", format!("need t_start > t_end > 0, got {a} and {b}"));
        } else if let Err(e) = s.eval(a).and(s.eval(b)) {
            p.issue("t_start", e.to_string());
        }
    }

    let metrics = if p.map.contains_key("metrics") {
        p.list("metrics", as_str).map(|names| {
            let mut out = Vec::new();
            for n in names {
                match Metric::parse(&n) {
                    Some(m) if !out.contains(&m) => out.push(m),
                    Some(_) => {}
                    None => p.issue(
                        "metrics",
                        format!("unknown metric `{n}` (sliced_wasserstein, frechet, mean_error)"),
                    ),
                }
            }
            out
        })
    } else {
        Some(vec![Metric::SlicedWasserstein, Metric::Frechet, Metric::MeanError])
    };
    let count = |p: &mut Parser, key: &str, default: usize, min: usize| -> usize {
        match p.uint(key) {
            Some(v) if v as usize >= min => v as usize,
            Some(_) => {
                p.issue(key, format!("must be at least {min}"));
                default
            }
            None => default,
        }
    };
    let samples = count(&mut p, "samples", 1000, 2);
    let reference_samples = count(&mut p, "reference_samples", 10_000, 2);
    let projections = count(&mut p, "projections", 128, 1);
    let step_records = p.boolean("step_records").unwrap_or(false);
    let trajectory = p.boolean("trajectory").unwrap_or(false);
    if trajectory {
        if let Some(d) = &distribution {
            if !d.is_gaussian() {
                p.issue("trajectory", "variance trajectories need single-Gaussian data");
            }
        }
    }
    let output = PathBuf::from(p.string("output").unwrap_or_else(|| "evodiff-out".into()));

    if !p.issues.is_empty() {
        let mut issues = p.issues;
        issues.sort_by_key(|i| (i.line.unwrap_or(0), i.field.clone()));
        return Err(ConfigError { issues });
    }
    Ok(ExperimentConfig {
        solvers: solvers.expect("checked"),
        budget: budget.expect("checked"),
        seeds: seeds.expect("checked"),
        dist,
        distribution: distribution.expect("checked"),
        schedule: schedule.expect("checked"),
        grid: grid.expect("checked"),
        t_start: t_start.expect("checked"),
        t_end: t_end.expect("checked"),
        metrics: metrics.expect("checked"),
        samples,
        reference_samples,
        projections,
        step_records,
        trajectory,
        output,
    })
}
