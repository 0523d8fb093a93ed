//! Empirical convergence order against a fine-grid self-reference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::oracle::Denoiser;
use crate::schedule::{make_grid, GridPolicy, NoiseSchedule};
use crate::solver::{draw_initial, run, SolverKind};

/// Errors below this (relative to the reference norm) count as exact.
pub const EXACT_TOL: f64 = 1e-12;

/// Setup of a refinement study.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub schedule: NoiseSchedule,
    pub policy: GridPolicy,
    pub t_start: f64,
    pub t_end: f64,
    pub ns: Vec<usize>,
    pub n_ref: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub ns: Vec<usize>,
    /// Mean over trials of `‖x_0^{(N)} - x_0^{(N_ref)}‖`.
    pub errors: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Least-squares slope of `-log error` against `log N`; `None` when exact.
    pub slope: Option<f64>,
    pub exact: bool,
}

/// Slope of the least-squares line through `(x, y)`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("slope needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("slope needs distinct abscissae"));
    }
    Ok(sxy / sxx)
}

/// Runs `kind` at every `N` in the study and at `n_ref` from shared initial
/// states. Trial `k` draws `x_T` from ChaCha8 stream `k` of `seed`, so the
/// result does not depend on thread scheduling.
pub fn convergence_order<F, D>(kind: &SolverKind, make_oracle: F, study: &ConvergenceStudy) -> Result<ConvergenceReport>
where
    F: Fn() -> D + Sync,
    D: Denoiser,
{
    if study.ns.len() < 2 || study.trials == 0 {
        return Err(invalid("convergence study needs two grid sizes and one trial"));
    }
    if study.ns.iter().any(|&n| n == 0 || n >= study.n_ref) {
        return Err(invalid("every N must lie in [1, N_ref)"));
    }
    let mk = |n| make_grid(&study.schedule, study.policy, n, study.t_start, study.t_end);
    let reference = mk(study.n_ref)?;
    let grids = study.ns.iter().map(|&n| mk(n)).collect::<Result<Vec<_>>>()?;

    let per_trial: Vec<(Vec<f64>, f64)> = (0..study.trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(study.seed);
            rng.set_stream(k as u64);
            let mut oracle = make_oracle();
            let x_t = draw_initial(&study.schedule, &reference, oracle.dim(), &mut rng)?;
            let x_ref = run(kind, &mut oracle, &reference, &study.schedule, x_t.view())?.x0;
            let errs = grids
                .iter()
                .map(|g| {
                    let x = run(kind, &mut oracle, g, &study.schedule, x_t.view())?.x0;
                    Ok((&x - &x_ref).mapv(|v| v * v).sum().sqrt())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((errs, x_ref.dot(&x_ref).sqrt()))
        })
        .collect::<Result<_>>()?;

    let t = study.trials as f64;
    let mut errors = vec![0.0; study.ns.len()];
    let mut sq = vec![0.0; study.ns.len()];
    let mut ref_norm = 0.0f64;
    for (errs, norm) in &per_trial {
        ref_norm = ref_norm.max(*norm);
        for (j, e) in errs.iter().enumerate() {
            errors[j] += e / t;
            sq[j] += e * e / t;
        }
    }
    let std_errors = errors
        .iter()
        .zip(&sq)
        .map(|(m, s)| {
            if study.trials > 1 {
                ((s - m * m).max(0.0) * t / (t - 1.0) / t).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let exact = errors.iter().all(|&e| e <= EXACT_TOL * (1.0 + ref_norm));
    let slope = if exact {
        None
    } else {
        let lx: Vec<f64> = study.ns.iter().map(|&n| (n as f64).ln()).collect();
        let ly: Vec<f64> = errors.iter().map(|e| -e.ln()).collect();
        Some(least_squares_slope(&lx, &ly)?)
    };
    Ok(ConvergenceReport {
        ns: study.ns.clone(),
        errors,
        std_errors,
        slope,
        exact,
    })
}
