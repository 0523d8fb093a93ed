//! Gaussian entropy, the entropy change of a gradient step relative to DDIM,
//! and per-step transition-variance trajectories.

use ndarray::{Array1, ArrayView1};

use crate::error::{domain, invalid, Result};
use crate::oracle::DataDistribution;
use crate::schedule::{NoiseSchedule, TimeGrid};
use crate::solver::{run, SolverKind};
use crate::DenoiserOracle;

/// Differential entropy of `N(·, diag(var))`: `½d(log 2π + 1) + ½Σ log var`.
pub fn gaussian_entropy(var: ArrayView1<f64>) -> Result<f64> {
    if var.is_empty() {
        return Err(invalid("entropy needs at least one dimension"));
    }
    if var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(domain("entropy needs positive, finite variances"));
    }
    let d = var.len() as f64;
    Ok(0.5 * d * ((2.0 * std::f64::consts::PI).ln() + 1.0) + 0.5 * var.iter().map(|v| v.ln()).sum::<f64>())
}

/// Entropy change of the gradient-corrected step relative to DDIM:
/// `(d/2) log|1 - ρ + ρ²/4 + (ρ²/4) var_s/var_t|` with `ρ = h/ĥ`.
pub fn delta_entropy_gradient_vs_ddim(dim: usize, h: f64, h_hat: f64, var_s: f64, var_t: f64) -> Result<f64> {
    if dim == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if h_hat == 0.0 || !(var_s > 0.0 && var_t > 0.0) {
        return Err(domain("entropy change needs ĥ != 0 and positive variances"));
    }
    let rho = h / h_hat;
    let q = var_s / var_t;
    let a = 1.0 - rho + 0.25 * rho * rho + 0.25 * rho * rho * q;
    Ok(0.5 * dim as f64 * a.abs().ln())
}

/// Step ratios `h/ĥ` for which the gradient step does not raise entropy:
/// `[1, 4 var_t / (var_s + var_t)]`.
pub fn entropy_reducing_interval(var_s: f64, var_t: f64) -> (f64, f64) {
    (1.0, 4.0 * var_t / (var_s + var_t))
}

/// The same interval written with signal-to-noise ratios:
/// `[1, 4 SNR(s) / (SNR(t) + SNR(s))]`.
pub fn entropy_reducing_interval_snr(snr_t: f64, snr_s: f64) -> (f64, f64) {
    (1.0, 4.0 * snr_s / (snr_t + snr_s))
}

/// One row of a per-step variance trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyRecord {
    pub i: usize,
    pub t: f64,
    /// Mean squared deviation of the step from the exact flow, per coordinate.
    pub var_estimate: f64,
    /// Gaussian entropy of the per-coordinate deviations.
    pub entropy_estimate: f64,
}

/// Per-step transition variance of a solver on a single-Gaussian oracle.
///
/// For each step `t_i → t_{i-1}` the solver output is compared with the exact
/// probability-flow map applied to the solver's own state at `t_i`, so each
/// row measures that step's local deviation. Rows are ordered from `i = N` down.
pub fn entropy_trajectory(
    kind: &SolverKind,
    distribution: &DataDistribution,
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    initial: &[Array1<f64>],
) -> Result<Vec<EntropyRecord>> {
    if initial.is_empty() {
        return Err(invalid("need at least one initial state"));
    }
    let d = distribution.dim();
    let n = grid.n_steps();
    let mut sq = vec![Array1::<f64>::zeros(d); n];
    for x_t in initial {
        let mut oracle = DenoiserOracle::new(
            distribution.clone(),
            schedule.clone(),
            kind.preferred_parameterization(),
        );
        let out = run(kind, &mut oracle, grid, schedule, x_t.view())?;
        let mut prev = x_t.clone();
        for (k, rec) in out.records.iter().enumerate() {
            let next = rec.corrected_state.as_ref().expect("run records every state");
            let exact = distribution.flow_map(schedule, prev.view(), grid.t(rec.i), grid.t(rec.i - 1))?;
            sq[k] += &(next - &exact).mapv(|e| e * e);
            prev = next.clone();
        }
    }
    let m = initial.len() as f64;
    sq.into_iter()
        .enumerate()
        .map(|(k, s)| {
            let var = s / m;
            let i = n - k;
            Ok(EntropyRecord {
                i,
                t: grid.t(i),
                var_estimate: var.mean().unwrap_or(0.0),
                entropy_estimate: gaussian_entropy(var.mapv(|v| v.max(f64::MIN_POSITIVE)).view())?,
            })
        })
        .collect()
}
