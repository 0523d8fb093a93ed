//! Two-step multistep updates in κ-space.
//!
//! With `m_i = d_θ(x_{t_i}, t_i)` and the backward difference
//! `B̄ = (m_i - m_{i+1}) / (r_i h_{t_i})`, every variant takes
//! `Δ = h m_i + (h²/2)·w·B̄` and differs only in `r_i` and the weight `w`.
//! The first step has no history and falls back to DDIM.

use std::collections::VecDeque;

use ndarray::{Array1, ArrayView1};

use super::{GradientWeight, Interp, MultistepVariant, StepRecord, Transition, ZetaPolicy};
use crate::error::{domain, Error, Result};
use crate::oracle::Denoiser;
use crate::schedule::{step_ratio, NoiseSchedule, Parameterization, RContext, RStrategy, TimeGrid};

/// A stored model evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEval {
    pub t: f64,
    pub state: Array1<f64>,
    pub model: Array1<f64>,
}

/// The two most recent evaluations, newest last.
#[derive(Debug, Clone, Default)]
pub struct EvalHistory {
    entries: VecDeque<ModelEval>,
}

impl EvalHistory {
    const CAPACITY: usize = 2;

    pub fn push(&mut self, e: ModelEval) {
        if self.entries.len() == Self::CAPACITY {
            self.entries.pop_front();
        }
        self.entries.push_back(e);
    }

    pub fn last(&self) -> Option<&ModelEval> {
        self.entries.back()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The evaluation at `t_{i+1}`, if the history holds it.
    pub(crate) fn previous_for(&self, grid: &TimeGrid, i: usize) -> Option<&ModelEval> {
        if i >= grid.n_steps() {
            return None;
        }
        self.last().filter(|e| e.t == grid.t(i + 1))
    }
}

/// Literal exponential-integrator form of the DPM-Solver++(2M) update,
/// `Δ = c m_i + c (m_i - m_{i+1}) / (2 r)` with `c = -κ(t_{i-1})(e^{-h_λ} - 1)`.
pub fn dpmpp2m_exponential_update(
    tr: &Transition,
    x: ArrayView1<f64>,
    m: ArrayView1<f64>,
    m_prev: ArrayView1<f64>,
    r: f64,
) -> Result<Array1<f64>> {
    if tr.param != Parameterization::DataPrediction {
        return Err(Error::ParameterizationMismatch {
            expected: Parameterization::DataPrediction,
            found: tr.param,
        });
    }
    let h_lambda = tr.next.lambda - tr.cur.lambda;
    let c = -tr.kappa_next * (-h_lambda).exp_m1();
    let delta = Array1::from_shape_fn(x.len(), |j| c * m[j] + c * (m[j] - m_prev[j]) / (2.0 * r));
    Ok(tr.apply(x, delta.view()))
}

fn variance_ratio_zeta(interp: Interp, schedule: &NoiseSchedule, grid: &TimeGrid, i: usize) -> Result<f64> {
    let var = |k: usize| -> Result<f64> { Ok(schedule.sigma(grid.t(k))?.powi(2)) };
    let cur = var(i)?;
    Ok(match interp {
        Interp::ExplicitL => cur / (cur + var(i + 1)?),
        Interp::ImplicitS => {
            let next = var(i - 1)?;
            next / (cur + next)
        }
    })
}

/// One multistep step. Evaluates the model once and appends it to `history`.
pub fn multistep_step<D: Denoiser + ?Sized>(
    x: ArrayView1<f64>,
    i: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    oracle: &mut D,
    history: &mut EvalHistory,
    variant: MultistepVariant,
) -> Result<(Array1<f64>, StepRecord)> {
    let p = oracle.parameterization();
    let tr = Transition::for_step(p, schedule, grid, i)?;
    let m = oracle.evaluate(x, tr.cur.t)?;
    let mut rec = StepRecord::new(i, tr.cur.t);
    let out = match history.previous_for(grid, i) {
        None => tr.ddim(x, m.view()),
        Some(prev) => {
            let diff = &m - &prev.model;
            let (r, w) = match variant {
                MultistepVariant::PlainKappa => {
                    let h_prev = tr.kappa_cur - p.kappa_at(schedule, prev.t)?;
                    (h_prev / tr.h, 1.0)
                }
                MultistepVariant::DpmPp2M => (step_ratio(RStrategy::LogSnr, grid, schedule, p, i, None)?, 1.0),
                MultistepVariant::ReMulti {
                    interp,
                    zeta,
                    r_strategy,
                    weight,
                } => {
                    let direction = &diff * tr.h.signum();
                    let ctx = RContext {
                        direction: direction.view(),
                        state: x,
                    };
                    let r = step_ratio(r_strategy, grid, schedule, p, i, Some(&ctx))?;
                    let z = match zeta {
                        ZetaPolicy::Fixed { zeta } => zeta,
                        ZetaPolicy::VarianceRatio => variance_ratio_zeta(interp, schedule, grid, i)?,
                    };
                    rec.zeta = Some(z);
                    let w = match weight {
                        GradientWeight::Balanced => 2.0 * z,
                        GradientWeight::Literal => z,
                    };
                    (r, w)
                }
            };
            if !((r * tr.h).abs() >= 1e-14) {
                return Err(domain(format!("degenerate multistep ratio r={r} at step {i}")));
            }
            rec.r = Some(r);
            let h = tr.h;
            let delta = Array1::from_shape_fn(x.len(), |j| h * m[j] + 0.5 * h * w * diff[j] / r);
            tr.apply(x, delta.view())
        }
    };
    history.push(ModelEval {
        t: tr.cur.t,
        state: x.to_owned(),
        model: m,
    });
    Ok((out, rec))
}
