//! Deterministic samplers for the probability-flow ODE.
//!
//! Every step is written in the form `f(x_{t_{i-1}}) = f(x_{t_i}) + Δ` where
//! `f(x) = x/α` (noise prediction) or `f(x) = x/σ` (data prediction) and `Δ`
//! approximates `∫ d_θ dκ` over the step. See [`Transition`].

mod evodiff;
mod multistep;
mod single;

use std::fmt;

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Denoiser;
use crate::schedule::{NoiseSchedule, Parameterization, RStrategy, ScheduleValues, TimeGrid};
use crate::varopt::{OptFormula, ZetaMap};

pub use evodiff::evodiff_step;
pub use multistep::{dpmpp2m_exponential_update, multistep_step, EvalHistory, ModelEval};
pub use single::{
    ddim_step, dpm_solver_2s_step, fd_single_step, heun_edm_step, re_preset_params, re_single_step, Dpm2sForm,
};

/// κ-space bookkeeping for one move from `t_cur` to `t_next`.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    pub param: Parameterization,
    pub cur: ScheduleValues,
    pub next: ScheduleValues,
    pub kappa_cur: f64,
    pub kappa_next: f64,
    /// `κ(t_next) - κ(t_cur)`.
    pub h: f64,
}

impl Transition {
    pub fn new(param: Parameterization, schedule: &NoiseSchedule, t_cur: f64, t_next: f64) -> Result<Self> {
        let cur = schedule.eval(t_cur)?;
        let next = schedule.eval(t_next)?;
        let kappa_cur = param.kappa(&cur);
        let kappa_next = param.kappa(&next);
        Ok(Self {
            param,
            cur,
            next,
            kappa_cur,
            kappa_next,
            h: kappa_next - kappa_cur,
        })
    }

    /// Step `i` of a grid: `t_i → t_{i-1}`.
    pub fn for_step(param: Parameterization, schedule: &NoiseSchedule, grid: &TimeGrid, i: usize) -> Result<Self> {
        if i == 0 || i > grid.n_steps() {
            return Err(Error::InvalidParameter(format!(
                "step index {i} outside 1..={}",
                grid.n_steps()
            )));
        }
        Self::new(param, schedule, grid.t(i), grid.t(i - 1))
    }

    pub fn scale_cur(&self) -> f64 {
        self.param.state_scale(&self.cur)
    }

    pub fn scale_next(&self) -> f64 {
        self.param.state_scale(&self.next)
    }

    /// `x_next = scale_next · (x / scale_cur + delta)`.
    pub fn apply(&self, x: ArrayView1<f64>, delta: ArrayView1<f64>) -> Array1<f64> {
        let (sc, sn) = (self.scale_cur(), self.scale_next());
        Array1::from_shape_fn(x.len(), |j| sn * (x[j] / sc + delta[j]))
    }

    /// First-order (DDIM) move given the model output at `t_cur`.
    pub fn ddim(&self, x: ArrayView1<f64>, d: ArrayView1<f64>) -> Array1<f64> {
        self.apply(x, (&d * self.h).view())
    }
}

/// Which closed form sets the weight of the gradient term in the
/// variance-controlled multistep updates.
///
/// The weight multiplies `h²/2·B`. `Balanced` uses `2ζ`, so the balanced value
/// `ζ = ½` recovers the second-order update; `Literal` uses the coefficients
/// as written in the method's update rules (`ζ` for the multistep form, `1/ζ`
/// for the EVODiff corrector).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientWeight {
    #[default]
    Balanced,
    Literal,
}

/// Interpolation point of the RE multistep variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    /// Between `t_i` and the previous evaluation `t_{i+1}`.
    ExplicitL,
    /// Between `t_i` and the target `t_{i-1}`.
    ImplicitS,
}

/// How the RE multistep variant picks `ζ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ZetaPolicy {
    Fixed {
        zeta: f64,
    },
    /// Variance-balancing weight from the two endpoint variances.
    VarianceRatio,
}

/// Parameters of [`SolverKind::ReSingle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ReParams {
    Manual {
        gamma: f64,
        r: f64,
    },
    /// `r = 1`, `γ = ½`.
    Midpoint,
    /// SNR-balanced `r` and `γ`; see [`re_preset_params`].
    SnrBalanced,
}

/// Settings for [`SolverKind::EvoDiff`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvoDiffConfig {
    pub mu: f64,
    pub r_strategy: RStrategy,
    pub zeta_formula: OptFormula,
    pub eta_formula: OptFormula,
    pub zeta_map: ZetaMap,
    /// Reuse the probe evaluation as the next step's model output.
    pub reuse_probe: bool,
    pub weight: GradientWeight,
}

impl Default for EvoDiffConfig {
    fn default() -> Self {
        Self {
            mu: 0.5,
            r_strategy: RStrategy::LogSnr,
            zeta_formula: OptFormula::Literal,
            eta_formula: OptFormula::AnalyticMin,
            zeta_map: ZetaMap::Plain,
            reuse_probe: true,
            weight: GradientWeight::Balanced,
        }
    }
}

/// Multistep update family used by [`multistep_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum MultistepVariant {
    /// `r_i = h_{t_{i+1}}/h_{t_i}`, weight one.
    PlainKappa,
    /// `r_i` from log-SNR steps, weight one.
    DpmPp2M,
    /// Variance-weighted gradient term.
    ReMulti {
        interp: Interp,
        zeta: ZetaPolicy,
        r_strategy: RStrategy,
        weight: GradientWeight,
    },
}

/// A complete sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case")]
pub enum SolverKind {
    Ddim,
    FdSingle { r: f64 },
    ReSingle { params: ReParams },
    HeunEdm,
    DpmSolver2S { r1: f64 },
    Multistep { variant: MultistepVariant },
    EvoDiff { config: EvoDiffConfig },
}

impl SolverKind {
    pub fn dpmpp2m() -> Self {
        Self::Multistep {
            variant: MultistepVariant::DpmPp2M,
        }
    }

    pub fn plain_kappa() -> Self {
        Self::Multistep {
            variant: MultistepVariant::PlainKappa,
        }
    }

    pub fn remulti(interp: Interp, zeta: ZetaPolicy) -> Self {
        Self::Multistep {
            variant: MultistepVariant::ReMulti {
                interp,
                zeta,
                r_strategy: RStrategy::LogSnr,
                weight: GradientWeight::Balanced,
            },
        }
    }

    pub fn evodiff() -> Self {
        Self::EvoDiff {
            config: EvoDiffConfig::default(),
        }
    }

    /// Required parameterization, or `None` if either works.
    pub fn required_parameterization(&self) -> Option<Parameterization> {
        match self {
            Self::DpmSolver2S { .. } => Some(Parameterization::NoisePrediction),
            Self::EvoDiff { .. }
            | Self::Multistep {
                variant: MultistepVariant::DpmPp2M | MultistepVariant::ReMulti { .. },
            } => Some(Parameterization::DataPrediction),
            _ => None,
        }
    }

    /// Parameterization to build an oracle with.
    pub fn preferred_parameterization(&self) -> Parameterization {
        self.required_parameterization()
            .unwrap_or(Parameterization::DataPrediction)
    }

    /// Oracle evaluations for an `n`-step run.
    pub fn expected_nfe(&self, n: usize) -> usize {
        match self {
            Self::Ddim | Self::Multistep { .. } => n,
            Self::FdSingle { .. } | Self::ReSingle { .. } | Self::HeunEdm | Self::DpmSolver2S { .. } => 2 * n,
            Self::EvoDiff { config } => {
                if n <= 1 {
                    n
                } else if config.reuse_probe {
                    n + 1
                } else {
                    2 * n - 1
                }
            }
        }
    }

    /// Largest `n` whose run costs at most `nfe` evaluations.
    pub fn steps_for_nfe(&self, nfe: usize) -> usize {
        (1..=nfe).rev().find(|&n| self.expected_nfe(n) <= nfe).unwrap_or(0)
    }

    /// Short stable identifier, used in output files.
    pub fn label(&self) -> String {
        match self {
            Self::Ddim => "ddim".into(),
            Self::FdSingle { r } => format!("fd_single(r={r})"),
            Self::ReSingle { params } => match params {
                ReParams::Manual { gamma, r } => format!("re_single(gamma={gamma},r={r})"),
                ReParams::Midpoint => "re_single(midpoint)".into(),
                ReParams::SnrBalanced => "re_single(snr)".into(),
            },
            Self::HeunEdm => "heun".into(),
            Self::DpmSolver2S { r1 } => format!("dpm2s(r1={r1})"),
            Self::Multistep { variant } => match variant {
                MultistepVariant::PlainKappa => "plain_kappa".into(),
                MultistepVariant::DpmPp2M => "dpmpp2m".into(),
                MultistepVariant::ReMulti {
                    interp,
                    zeta,
                    r_strategy,
                    weight,
                } => {
                    let i = match interp {
                        Interp::ExplicitL => "l",
                        Interp::ImplicitS => "s",
                    };
                    let z = match zeta {
                        ZetaPolicy::Fixed { zeta } => format!("{zeta}"),
                        ZetaPolicy::VarianceRatio => "var".into(),
                    };
                    format!("remulti({i},zeta={z},r={r_strategy},{})", weight_label(*weight))
                }
            },
            Self::EvoDiff { config } => {
                let mut s = format!("evodiff(mu={},r={}", config.mu, config.r_strategy);
                if !config.reuse_probe {
                    s.push_str(",fresh");
                }
                if config.eta_formula != OptFormula::AnalyticMin {
                    s.push_str(",eta=literal");
                }
                if config.zeta_formula != OptFormula::Literal {
                    s.push_str(",zeta=analytic");
                }
                if config.zeta_map == ZetaMap::SigmaScaled {
                    s.push_str(",scaled");
                }
                if config.weight == GradientWeight::Literal {
                    s.push_str(",literal");
                }
                s.push(')');
                s
            }
        }
    }
}

fn weight_label(w: GradientWeight) -> &'static str {
    match w {
        GradientWeight::Balanced => "balanced",
        GradientWeight::Literal => "literal",
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Which EVODiff weights fell back to their defaults on a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Fallback {
    pub zeta: bool,
    pub eta: bool,
}

impl Fallback {
    pub fn any(&self) -> bool {
        self.zeta || self.eta
    }
}

impl fmt::Display for Fallback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.zeta, self.eta) {
            (false, false) => Ok(()),
            (true, false) => f.write_str("zeta"),
            (false, true) => f.write_str("eta"),
            (true, true) => f.write_str("zeta|eta"),
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepRecord {
    /// Step index; the step moves `t_i → t_{i-1}`.
    pub i: usize,
    pub t: f64,
    pub zeta: Option<f64>,
    pub eta: Option<f64>,
    pub r: Option<f64>,
    pub zeta_raw: Option<f64>,
    pub eta_raw: Option<f64>,
    /// Oracle evaluations spent in this step.
    pub nfe: usize,
    pub fallback: Fallback,
    pub predictor_state: Option<Array1<f64>>,
    pub corrected_state: Option<Array1<f64>>,
}

impl StepRecord {
    pub(crate) fn new(i: usize, t: f64) -> Self {
        Self {
            i,
            t,
            ..Self::default()
        }
    }
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub x0: Array1<f64>,
    pub records: Vec<StepRecord>,
    pub nfe: usize,
}

/// Draw `x_T ~ N(0, σ_{t_N}² I)`.
pub fn draw_initial<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    dim: usize,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let sigma = schedule.sigma(grid.t_start())?;
    Ok(Array1::from_shape_fn(dim, |_| {
        sigma * rng.sample::<f64, _>(StandardNormal)
    }))
}

/// Integrate from `x_T` at `t_N` down to `t_0`.
pub fn run<D: Denoiser + ?Sized>(
    kind: &SolverKind,
    oracle: &mut D,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    x_t: ArrayView1<f64>,
) -> Result<RunOutput> {
    validate_kind(kind)?;
    let found = oracle.parameterization();
    if let Some(expected) = kind.required_parameterization() {
        if expected != found {
            return Err(Error::ParameterizationMismatch { expected, found });
        }
    }
    if x_t.len() != oracle.dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.dim(),
            found: x_t.len(),
        });
    }
    let start = oracle.evaluations();
    let n = grid.n_steps();
    let mut x = x_t.to_owned();
    let mut records = Vec::with_capacity(n);
    let mut history = EvalHistory::default();
    let mut cached: Option<ModelEval> = None;
    for i in (1..=n).rev() {
        let before = oracle.evaluations();
        let (next, mut rec) = match kind {
            SolverKind::Ddim => (
                ddim_step(x.view(), i, grid, schedule, oracle)?,
                StepRecord::new(i, grid.t(i)),
            ),
            SolverKind::FdSingle { r } => (
                fd_single_step(x.view(), i, grid, schedule, oracle, *r)?,
                StepRecord::new(i, grid.t(i)),
            ),
            SolverKind::ReSingle { params } => (
                re_single_step(x.view(), i, grid, schedule, oracle, *params)?,
                StepRecord::new(i, grid.t(i)),
            ),
            SolverKind::HeunEdm => (
                heun_edm_step(x.view(), i, grid, schedule, oracle)?,
                StepRecord::new(i, grid.t(i)),
            ),
            SolverKind::DpmSolver2S { r1 } => (
                dpm_solver_2s_step(x.view(), i, grid, schedule, oracle, *r1, Dpm2sForm::Exponential)?,
                StepRecord::new(i, grid.t(i)),
            ),
            SolverKind::Multistep { variant } => {
                multistep_step(x.view(), i, grid, schedule, oracle, &mut history, *variant)?
            }
            SolverKind::EvoDiff { config } => {
                evodiff_step(x.view(), i, grid, schedule, oracle, &mut history, &mut cached, config)?
            }
        };
        rec.nfe = oracle.evaluations() - before;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { index: i });
        }
        rec.corrected_state = Some(next.clone());
        records.push(rec);
        x = next;
    }
    Ok(RunOutput {
        x0: x,
        records,
        nfe: oracle.evaluations() - start,
    })
}

fn validate_kind(kind: &SolverKind) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidParameter(m));
    match *kind {
        SolverKind::FdSingle { r } if !(r >= 1.0 && r.is_finite()) => bad(format!("fd_single needs r >= 1, got {r}")),
        SolverKind::ReSingle {
            params: ReParams::Manual { gamma, r },
        } if !(gamma > 0.0 && gamma <= 1.0 && r >= 1.0 && r.is_finite()) => {
            bad(format!("re_single needs gamma in (0,1] and r >= 1, got {gamma}, {r}"))
        }
        SolverKind::DpmSolver2S { r1 } if !(r1 > 0.0 && r1 <= 1.0) => bad(format!("dpm2s needs r1 in (0,1], got {r1}")),
        SolverKind::Multistep {
            variant:
                MultistepVariant::ReMulti {
                    zeta: ZetaPolicy::Fixed { zeta },
                    ..
                },
        } if !(zeta > 0.0 && zeta <= 1.0) => bad(format!("fixed zeta must lie in (0,1], got {zeta}")),
        SolverKind::EvoDiff { config } if !config.mu.is_finite() => bad("mu must be finite".into()),
        _ => Ok(()),
    }
}
