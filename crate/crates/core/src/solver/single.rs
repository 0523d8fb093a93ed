//! Single-step solvers: DDIM, finite-difference, RE, Heun and DPM-Solver-2S.

use ndarray::{Array1, ArrayView1};

use super::{ReParams, Transition};
use crate::error::{domain, Error, Result};
use crate::oracle::Denoiser;
use crate::schedule::{NoiseSchedule, Parameterization, TimeGrid};

/// First-order step `f(x_{t_{i-1}}) = f(x_{t_i}) + h d_θ(x_{t_i}, t_i)`.
pub fn ddim_step<D: Denoiser + ?Sized>(
    x: ArrayView1<f64>,
    i: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    oracle: &mut D,
) -> Result<Array1<f64>> {
    let tr = Transition::for_step(oracle.parameterization(), schedule, grid, i)?;
    let d = oracle.evaluate(x, tr.cur.t)?;
    Ok(tr.ddim(x, d.view()))
}

/// Intermediate point `s` with `κ(s) = κ(t_i) + h/r`, and the inner DDIM move to it.
struct Probe {
    tr: Transition,
    model: Array1<f64>,
}

fn probe<D: Denoiser + ?Sized>(
    x: ArrayView1<f64>,
    d_t: ArrayView1<f64>,
    full: &Transition,
    r: f64,
    schedule: &NoiseSchedule,
    oracle: &mut D,
) -> Result<Probe> {
    let t_s = if r == 1.0 {
        full.next.t
    } else {
        full.param.t_from_kappa(schedule, full.kappa_cur + full.h / r)?
    };
    let tr = Transition::new(full.param, schedule, full.cur.t, t_s)?;
    if tr.h.abs() < 1e-14 {
        return Err(domain(format!("probe step {:e} is degenerate", tr.h)));
    }
    let state = tr.ddim(x, d_t);
    let model = oracle.evaluate(state.view(), t_s)?;
    Ok(Probe { tr, model })
}

/// Second-order finite-difference step:
/// `Δ = h d_t + h²/2 · (d_s - d_t)/ĥ` with `ĥ = κ(s) - κ(t_i) = h/r`.
pub fn fd_single_step<D: Denoiser + ?Sized>(
    x: ArrayView1<f64>,
    i: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    oracle: &mut D,
    r: f64,
) -> Result<Array1<f64>> {
    re_like_step(x, i, grid, schedule, oracle, 0.0, r)
}

/// `(γ, r)` of the SNR-balanced RE preset.
pub fn re_preset_params(snr_t: f64, snr_s: f64) -> (f64, f64) {
    let sum = snr_t + snr_s;
    (snr_t / sum, (2.0 * snr_s / sum).sqrt())
}

/// RE step: `Δ = h[γ d_s + (1-γ) d_t] + h²/2 · (d_s - d_t)/ĥ`.
///
/// For [`ReParams::SnrBalanced`], `r` uses the SNR at `t_{i-1}` and `γ` the
/// SNR at the resulting probe time.
pub fn re_single_step<D: Denoiser + ?Sized>(
    x: ArrayView1<f64>,
    i: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    oracle: &mut D,
    params: ReParams,
) -> Result<Array1<f64>> {
    match params {
        ReParams::Manual { gamma, r } => re_like_step(x, i, grid, schedule, oracle, gamma, r),
        ReParams::Midpoint => re_like_step(x, i, grid, schedule, oracle, 0.5, 1.0),
        ReParams::SnrBalanced => {
            let full = Transition::for_step(oracle.parameterization(), schedule, grid, i)?;
            let (_, r) = re_preset_params(full.cur.snr(), full.next.snr());
            let d_t = oracle.evaluate(x, full.cur.t)?;
            let p = probe(x, d_t.view(), &full, r.max(1.0), schedule, oracle)?;
            let (gamma, _) = re_preset_params(full.cur.snr(), p.tr.next.snr());
            Ok(combine(x, &full, d_t.view(), &p, gamma))
        }
    }
}

fn re_like_step<D: Denoiser + ?Sized>(
    x: ArrayView1<f64>,
    i: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    oracle: &mut D,
    gamma: f64,
    r: f64,
) -> Result<Array1<f64>> {
    let full = Transition::for_step(oracle.parameterization(), schedule, grid, i)?;
    let d_t = oracle.evaluate(x, full.cur.t)?;
    let p = probe(x, d_t.view(), &full, r, schedule, oracle)?;
    Ok(combine(x, &full, d_t.view(), &p, gamma))
}

fn combine(x: ArrayView1<f64>, full: &Transition, d_t: ArrayView1<f64>, p: &Probe, gamma: f64) -> Array1<f64> {
    let h = full.h;
    let h_hat = p.tr.h;
    let delta = Array1::from_shape_fn(x.len(), |j| {
        let grad = (p.model[j] - d_t[j]) / h_hat;
        h * (gamma * p.model[j] + (1.0 - gamma) * d_t[j]) + 0.5 * h * h * grad
    });
    full.apply(x, delta.view())
}

/// Heun step: `Δ = h (d_θ(x_{t_i}, t_i) + d_θ(x̃_{t_{i-1}}, t_{i-1}))/2` with a DDIM predictor.
pub fn heun_edm_step<D: Denoiser + ?Sized>(
    x: ArrayView1<f64>,
    i: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    oracle: &mut D,
) -> Result<Array1<f64>> {
    let tr = Transition::for_step(oracle.parameterization(), schedule, grid, i)?;
    let d_t = oracle.evaluate(x, tr.cur.t)?;
    let pred = tr.ddim(x, d_t.view());
    let d_next = oracle.evaluate(pred.view(), tr.next.t)?;
    let delta = (&d_t + &d_next) * (0.5 * tr.h);
    Ok(tr.apply(x, delta.view()))
}

/// Algebraic form of the DPM-Solver-2S update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dpm2sForm {
    /// Exponential-integrator coefficients in `e^{h_λ}`.
    Exponential,
    /// `Δ = h ε_t + (h h_λ/2)(ε_s - ε_t)/ĥ_λ` in κ-space.
    Gradient,
}

/// DPM-Solver-2S with midpoint `λ_s = λ_{t_i} + r1 h_λ`. Needs a noise-prediction oracle.
pub fn dpm_solver_2s_step<D: Denoiser + ?Sized>(
    x: ArrayView1<f64>,
    i: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    oracle: &mut D,
    r1: f64,
    form: Dpm2sForm,
) -> Result<Array1<f64>> {
    let p = Parameterization::NoisePrediction;
    if oracle.parameterization() != p {
        return Err(Error::ParameterizationMismatch {
            expected: p,
            found: oracle.parameterization(),
        });
    }
    let full = Transition::for_step(p, schedule, grid, i)?;
    let h_lambda = full.next.lambda - full.cur.lambda;
    let t_s = if r1 == 1.0 {
        full.next.t
    } else {
        schedule.t_from_lambda(full.cur.lambda + r1 * h_lambda)?
    };
    let to_s = Transition::new(p, schedule, full.cur.t, t_s)?;
    let eps_t = oracle.evaluate(x, full.cur.t)?;
    let x_s = to_s.ddim(x, eps_t.view());
    let eps_s = oracle.evaluate(x_s.view(), t_s)?;
    let delta = match form {
        Dpm2sForm::Exponential => {
            let c = full.kappa_next * h_lambda.exp_m1();
            Array1::from_shape_fn(x.len(), |j| -c * eps_t[j] - c * (eps_s[j] - eps_t[j]) / (2.0 * r1))
        }
        Dpm2sForm::Gradient => {
            let h = full.h;
            let h_hat_lambda = r1 * h_lambda;
            Array1::from_shape_fn(x.len(), |j| {
                h * eps_t[j] + 0.5 * h * h_lambda * (eps_s[j] - eps_t[j]) / h_hat_lambda
            })
        }
    };
    Ok(full.apply(x, delta.view()))
}
