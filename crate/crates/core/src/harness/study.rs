//! Convergence-order studies driven by an experiment config.

use super::config::ExperimentConfig;
use super::experiment::{run_id, sort_rows, MetricRow};
use crate::diagnostics::{convergence_order, ConvergenceStudy};
use crate::error::Result;
use crate::oracle::DenoiserOracle;

/// For every solver and seed, error rows `error` at each `N` against an
/// `n_ref`-step self-reference, and one `slope` row with `N = n_ref`.
/// `cfg.samples` is the number of trials per seed.
pub fn run_convergence(cfg: &ExperimentConfig, n_ref: usize) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for kind in &cfg.solvers {
        let ns = cfg.budget.resolve(kind);
        for &seed in &cfg.seeds {
            let study = ConvergenceStudy {
                schedule: cfg.schedule.clone(),
                policy: cfg.grid,
                t_start: cfg.t_start,
                t_end: cfg.t_end,
                ns: ns.clone(),
                n_ref,
                trials: cfg.samples,
                seed,
            };
            let make = || {
                DenoiserOracle::new(
                    cfg.distribution.clone(),
                    cfg.schedule.clone(),
                    kind.preferred_parameterization(),
                )
            };
            let rep = convergence_order(kind, make, &study)?;
            let label = kind.label();
            for (&n, &e) in rep.ns.iter().zip(&rep.errors) {
                rows.push(MetricRow {
                    run_id: run_id(kind, n, seed),
                    solver: label.clone(),
                    n,
                    nfe: kind.expected_nfe(n),
                    seed,
                    metric_name: "error".into(),
                    value: e,
                });
            }
            rows.push(MetricRow {
                run_id: run_id(kind, n_ref, seed),
                solver: label.clone(),
                n: n_ref,
                nfe: kind.expected_nfe(n_ref),
                seed,
                metric_name: "slope".into(),
                value: rep.slope.unwrap_or(f64::INFINITY),
            });
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_config;

    #[test]
    fn ddim_slope_row_is_near_one() {
        let cfg = parse_config("solver = \"ddim\"\nsteps = [10, 20, 40]\nseed = 1\nsamples = 4\n").unwrap();
        let rows = run_convergence(&cfg, 640).unwrap();
        assert_eq!(rows.len(), 4);
        let slope = rows.iter().find(|r| r.metric_name == "slope").unwrap().value;
        assert!((0.8..1.2).contains(&slope), "{slope}");
    }
}
