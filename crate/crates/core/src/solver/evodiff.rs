//! Variance-controlled predictor–corrector multistep step.
//!
//! Step `i` (data prediction, `h = h_{t_i} > 0`):
//!
//! 1. `m_i = x_θ(x, t_i)`, reused from the previous probe when enabled.
//! 2. Backward gradient `B_bl = (m_i - m_{i+1}) / (r_i h)`.
//! 3. Predictor `x̂ = g(x) + σ_{i-1} h²/2 · B_bl` where `g` is the DDIM move.
//! 4. Probe `m̂ = x_θ(x̂, t_{i-1})`, forward gradient `B_st = (m̂ - m_i)/h`.
//! 5. `η` blends the two gradients: `B = (1-η/2) B_st + (η/2) B_bl`.
//! 6. `ζ` comes from a backward reconstruction of `x` from `x̂`.
//! 7. Corrector `x_{i-1} = g(x) + σ_{i-1} h²/2 · w(ζ) · B`.
//!
//! `w(ζ) = 2ζ` by default ([`GradientWeight::Balanced`]); the literal
//! corrector uses `1/ζ` ([`GradientWeight::Literal`]).

use ndarray::{Array1, ArrayView1};

use super::multistep::{EvalHistory, ModelEval};
use super::{EvoDiffConfig, GradientWeight, StepRecord, Transition};
use crate::error::{domain, Error, Result};
use crate::oracle::Denoiser;
use crate::schedule::{step_ratio, NoiseSchedule, Parameterization, RContext, TimeGrid};
use crate::varopt::{eta_star, map_eta, map_zeta, zeta_star, EtaInputs, ZetaInputs};

/// One EVODiff step. `cached` carries the probe evaluation between steps.
#[allow(clippy::too_many_arguments)]
pub fn evodiff_step<D: Denoiser + ?Sized>(
    x: ArrayView1<f64>,
    i: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    oracle: &mut D,
    history: &mut EvalHistory,
    cached: &mut Option<ModelEval>,
    cfg: &EvoDiffConfig,
) -> Result<(Array1<f64>, StepRecord)> {
    let p = Parameterization::DataPrediction;
    if oracle.parameterization() != p {
        return Err(Error::ParameterizationMismatch {
            expected: p,
            found: oracle.parameterization(),
        });
    }
    let tr = Transition::for_step(p, schedule, grid, i)?;
    let m = match cached.take() {
        Some(e) if cfg.reuse_probe && e.t == tr.cur.t => e.model,
        _ => oracle.evaluate(x, tr.cur.t)?,
    };
    let mut rec = StepRecord::new(i, tr.cur.t);
    let Some(prev) = history.previous_for(grid, i) else {
        let out = tr.ddim(x, m.view());
        history.push(ModelEval {
            t: tr.cur.t,
            state: x.to_owned(),
            model: m,
        });
        return Ok((out, rec));
    };

    let h = tr.h;
    let (sig_cur, sig_next) = (tr.cur.sigma, tr.next.sigma);
    let diff = &m - &prev.model;
    let ctx = RContext {
        direction: diff.view(),
        state: x,
    };
    let r = step_ratio(cfg.r_strategy, grid, schedule, p, i, Some(&ctx))?;
    if !((r * h).abs() >= 1e-14) {
        return Err(domain(format!("degenerate ratio r={r} at step {i}")));
    }
    let b_bl = &diff / (r * h);
    let g = tr.ddim(x, m.view());
    let x_hat = &g + &(&b_bl * (sig_next * 0.5 * h * h));
    let m_hat = oracle.evaluate(x_hat.view(), tr.next.t)?;
    let b_st = (&m_hat - &m) / h;

    let eta_in = EtaInputs {
        b1: b_st.view(),
        b2: b_bl.view(),
    };
    let (eta, eta_raw) = match eta_star(&eta_in, cfg.eta_formula) {
        Ok(raw) => (map_eta(raw), Some(raw)),
        Err(Error::DegenerateDirection { .. }) => {
            rec.fallback.eta = true;
            (1.0, None)
        }
        Err(e) => return Err(e),
    };
    let b = &b_st * (1.0 - 0.5 * eta) + &b_bl * (0.5 * eta);

    // Reconstruct x from x̂ by a backward step and compare with a forward one.
    let back = sig_cur / sig_next;
    let x_hat2 = &x_hat * back - &m_hat * (sig_cur * h) + &b_st * (sig_cur * 0.5 * h * h);
    let p_vec = &x_hat2 + &(&x_hat * back) - &(&x * 2.0);
    let d = &m_hat - &m;
    let zeta_in = ZetaInputs {
        p: p_vec.view(),
        d: d.view(),
        m_t: m.view(),
        sigma_h: sig_cur * h,
    };
    let sigma_ratio = sig_cur / schedule.sigma(prev.t)?;
    let (zeta, zeta_raw) = match zeta_star(&zeta_in, cfg.zeta_formula) {
        Ok(raw) => (map_zeta(raw, cfg.mu, cfg.zeta_map, sigma_ratio), Some(raw)),
        Err(Error::DegenerateDirection { .. }) => {
            rec.fallback.zeta = true;
            (neutral_zeta(cfg.weight), None)
        }
        Err(e) => return Err(e),
    };
    let w = match cfg.weight {
        GradientWeight::Balanced => 2.0 * zeta,
        GradientWeight::Literal => 1.0 / zeta,
    };
    let out = &g + &(&b * (sig_next * 0.5 * h * h * w));

    rec.r = Some(r);
    rec.eta = Some(eta);
    rec.eta_raw = eta_raw;
    rec.zeta = Some(zeta);
    rec.zeta_raw = zeta_raw;
    rec.predictor_state = Some(x_hat.clone());

    history.push(ModelEval {
        t: tr.cur.t,
        state: x.to_owned(),
        model: m,
    });
    if cfg.reuse_probe {
        *cached = Some(ModelEval {
            t: tr.next.t,
            state: x_hat,
            model: m_hat,
        });
    }
    Ok((out, rec))
}

/// `ζ` at which the corrector weight is one.
pub(crate) fn neutral_zeta(weight: GradientWeight) -> f64 {
    match weight {
        GradientWeight::Balanced => 0.5,
        GradientWeight::Literal => 1.0,
    }
}
