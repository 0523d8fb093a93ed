//! Subcommand bodies. Each returns the process exit code.

use std::fmt::Write as _;

use anyhow::{bail, ensure, Context, Result};
use evodiff_core::diagnostics::{
    data_vs_noise_variance, delta_entropy_gradient_vs_ddim, entropy_reducing_interval, entropy_trajectory,
    reconstruction_decomposition_check, Centering,
};
use evodiff_core::harness::{
    emit_entropy_trajectory, generate_samples, resolve_output_dir, rows_csv, run_convergence, run_experiment,
    step_records_csv, stream_rng, write_outputs, ExperimentConfig, Stream, MANIFEST_FILE, METRICS_FILE,
};
use evodiff_core::solver::draw_initial;
use evodiff_core::varopt::{eta_star, grid_search_min, zeta_star, EtaInputs, OptFormula, Surrogate, ZetaInputs};
use evodiff_core::{make_grid, SolverKind, TimeGrid};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::overrides::{emit, load, Overrides};
use crate::{CenteringArg, Check, CompareArgs, ConvergenceArgs, DiagnoseArgs, OracleCheckArgs, Report, SampleArgs};

fn to_i64(v: u64) -> Result<i64> {
    i64::try_from(v).context("value too large")
}

fn single<T: Copy>(values: &[T], what: &str) -> Result<T> {
    match values {
        [v] => Ok(*v),
        _ => bail!("expected exactly one {what}, got {}", values.len()),
    }
}

fn grid_for(cfg: &ExperimentConfig, n: usize) -> Result<TimeGrid> {
    Ok(make_grid(&cfg.schedule, cfg.grid, n, cfg.t_start, cfg.t_end)?)
}

pub fn sample(a: &SampleArgs) -> Result<u8> {
    let mut o = Overrides::default();
    if let Some(s) = &a.solver {
        o.replace("solver", "solvers", s.as_str());
    }
    if let Some(n) = a.steps {
        o.replace("steps", "nfe", to_i64(n as u64)?);
    }
    if let Some(n) = a.nfe {
        o.replace("nfe", "steps", to_i64(n as u64)?);
    }
    if let Some(s) = a.seed {
        o.replace("seed", "seeds", to_i64(s)?);
    }
    let cfg = load(&a.problem, &a.evo, o)?;
    let kind = single(&cfg.solvers, "solver")?;
    let n = single(&cfg.budget.resolve(&kind), "step budget")?;
    let seed = single(&cfg.seeds, "seed")?;
    ensure!(n > 0, "NFE budget too small for {kind}");
    let grid = grid_for(&cfg, n)?;
    let batch = generate_samples(&kind, &cfg.distribution, &cfg.schedule, &grid, a.samples.max(1), seed)?;
    emit(a.out.as_deref(), &step_records_csv(&batch.first_records))?;
    if let Some(path) = &a.samples_out {
        let d = batch.x0.ncols();
        let mut body = (0..d).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
        body.push('\n');
        for row in batch.x0.rows() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            body.push_str(&vals.join(","));
            body.push('\n');
        }
        emit(Some(path), &body)?;
    }
    eprintln!(
        "{kind}: N = {n}, {} evaluations per trajectory, {} trajectories",
        batch.nfe,
        batch.x0.nrows()
    );
    Ok(0)
}

pub fn convergence(a: &ConvergenceArgs) -> Result<u8> {
    let mut o = Overrides::default();
    o.list(
        "solvers",
        "solver",
        &a.solvers.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    let ns: Vec<i64> = a.ns.iter().map(|&n| to_i64(n as u64)).collect::<Result<_>>()?;
    o.list("steps", "nfe", &ns);
    let seeds: Vec<i64> = a.seeds.iter().map(|&s| to_i64(s)).collect::<Result<_>>()?;
    o.list("seeds", "seed", &seeds);
    o.set("samples", to_i64(a.trials as u64)?);
    let cfg = load(&a.problem, &a.evo, o)?;
    let rows = run_convergence(&cfg, a.n_ref)?;
    emit(a.out.as_deref(), &rows_csv(&rows)?)?;
    for r in rows.iter().filter(|r| r.metric_name == "slope") {
        eprintln!("{} seed {}: slope {:.3}", r.solver, r.seed, r.value);
    }
    Ok(0)
}

pub fn compare(a: &CompareArgs) -> Result<u8> {
    let mut o = Overrides::default();
    o.list(
        "solvers",
        "solver",
        &a.solvers.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    let steps: Vec<i64> = a.steps.iter().map(|&n| to_i64(n as u64)).collect::<Result<_>>()?;
    o.list("steps", "nfe", &steps);
    let nfe: Vec<i64> = a.nfe.iter().map(|&n| to_i64(n as u64)).collect::<Result<_>>()?;
    o.list("nfe", "steps", &nfe);
    let seeds: Vec<i64> = a.seeds.iter().map(|&s| to_i64(s)).collect::<Result<_>>()?;
    o.list("seeds", "seed", &seeds);
    o.list(
        "metrics",
        "metrics",
        &a.metrics.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    if let Some(s) = a.samples {
        o.set("samples", to_i64(s)?);
    }
    if a.step_records {
        o.set("step_records", true);
    }
    if a.trajectory {
        o.set("trajectory", true);
    }
    let mut cfg = load(&a.problem, &a.evo, o)?;
    if let Some(out) = &a.out {
        cfg.output = out.clone();
    }
    let dir = resolve_output_dir(&cfg);
    let out = run_experiment(&cfg);
    write_outputs(&out, &dir)?;
    let failed = out.manifest.failed();
    for cell in out.manifest.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("{}: {}", cell.run_id, cell.error.as_deref().unwrap_or_default());
    }
    eprintln!(
        "{} cells, {failed} failed; wrote {} and {} to {}",
        out.manifest.cells.len(),
        METRICS_FILE,
        MANIFEST_FILE,
        dir.display()
    );
    Ok(out.manifest.exit_code() as u8)
}

pub fn diagnose(a: &DiagnoseArgs) -> Result<u8> {
    let mut o = Overrides::default();
    o.replace("solver", "solvers", a.solver.as_str());
    o.replace("steps", "nfe", to_i64(a.steps as u64)?);
    o.replace("seed", "seeds", to_i64(a.seed)?);
    let cfg = load(&a.problem, &a.evo, o)?;
    let grid = grid_for(&cfg, a.steps)?;
    let dist = &cfg.distribution;
    let mut mc = stream_rng(a.seed, Stream::MonteCarlo);
    let mut body = String::new();
    match a.check {
        Check::Decomposition => {
            let centering = match a.centering {
                CenteringArg::Forward => Centering::ForwardPosterior,
                CenteringArg::Marginal => Centering::Marginal,
            };
            body.push_str("i,t_i,t_next,n,mse,variance_term,bias_term,residual,standard_error\n");
            for i in 0..grid.n_steps() {
                let r = reconstruction_decomposition_check(
                    dist,
                    &cfg.schedule,
                    grid.t(i),
                    grid.t(i + 1),
                    a.samples,
                    centering,
                    &mut mc,
                )?;
                writeln!(
                    body,
                    "{i},{},{},{},{},{},{},{},{}",
                    grid.t(i),
                    grid.t(i + 1),
                    r.n,
                    r.mse,
                    r.variance_term,
                    r.bias_term,
                    r.residual,
                    r.standard_error
                )?;
            }
        }
        Check::EntropyScan => {
            body.push_str("var_ratio,ratio,lower,upper,delta_h,inside\n");
            let dim = dist.dim();
            for qk in 0..=16 {
                let q = 0.25f64 * 16f64.powf(qk as f64 / 16.0);
                let (lo, hi) = entropy_reducing_interval(q, 1.0);
                for rk in 1..=16 {
                    let ratio = 0.25 * rk as f64;
                    let dh = delta_entropy_gradient_vs_ddim(dim, ratio, 1.0, q, 1.0)?;
                    let inside = ratio > lo && ratio < hi;
                    writeln!(body, "{q},{ratio},{lo},{hi},{dh},{inside}")?;
                }
            }
        }
        Check::VarianceOrder => {
            body.push_str("i,t_i,coef_data,coef_noise,var_data,var_noise\n");
            for r in data_vs_noise_variance(dist, &cfg.schedule, &grid, a.samples, &mut mc)? {
                writeln!(
                    body,
                    "{},{},{},{},{},{}",
                    r.i,
                    r.t,
                    r.coef_data,
                    r.coef_noise,
                    r.var_data(),
                    r.var_noise()
                )?;
            }
        }
        Check::Entropy => {
            let kind: SolverKind = single(&cfg.solvers, "solver")?;
            ensure!(dist.is_gaussian(), "entropy trajectories need single-Gaussian data");
            let mut noise = stream_rng(a.seed, Stream::Noise);
            let initial: Vec<Array1<f64>> = (0..a.samples.max(1))
                .map(|_| draw_initial(&cfg.schedule, &grid, dist.dim(), &mut noise))
                .collect::<evodiff_core::Result<_>>()?;
            let records = entropy_trajectory(&kind, dist, &cfg.schedule, &grid, &initial)?;
            body = emit_entropy_trajectory(&records);
        }
    }
    emit(a.out.as_deref(), &body)?;
    Ok(0)
}

const SEARCH_BOUND: f64 = 5.0;
const SEARCH_STEP: f64 = 1e-4;
const ARGMIN_TOL: f64 = 2e-4;

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal))
}

pub fn oracle_check(a: &OracleCheckArgs) -> Result<u8> {
    ensure!(
        a.instances > 0 && a.dim > 0,
        "need at least one instance and one dimension"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let norm = |v: &Array1<f64>| v.dot(v).sqrt();
    let mut csv = String::from(
        "instance,zeta_analytic,zeta_literal,zeta_grid,zeta_delta,eta_analytic,eta_literal,eta_grid,eta_delta\n",
    );
    let (mut worst_z, mut worst_e, mut over) = (0.0f64, 0.0f64, 0usize);
    for k in 0..a.instances {
        // Redraw until both minimisers are provably inside the search range.
        let (p, d, m, sigma_h, b1, b2) = loop {
            let p = normal_vec(&mut rng, a.dim);
            let d = normal_vec(&mut rng, a.dim);
            let m = normal_vec(&mut rng, a.dim);
            let sigma_h = rng.random_range(0.2..2.0);
            let b1 = normal_vec(&mut rng, a.dim);
            let b2 = normal_vec(&mut rng, a.dim);
            let zb = norm(&(&p - &(&m * sigma_h))) / (sigma_h * norm(&d));
            let eb = norm(&b1) / norm(&(&b1 - &b2));
            if zb <= SEARCH_BOUND && eb <= SEARCH_BOUND {
                break (p, d, m, sigma_h, b1, b2);
            }
        };
        let z = ZetaInputs {
            p: p.view(),
            d: d.view(),
            m_t: m.view(),
            sigma_h,
        };
        let e = EtaInputs {
            b1: b1.view(),
            b2: b2.view(),
        };
        let za = zeta_star(&z, OptFormula::AnalyticMin)?;
        let zl = zeta_star(&z, OptFormula::Literal)?;
        let ea = eta_star(&e, OptFormula::AnalyticMin)?;
        let el = eta_star(&e, OptFormula::Literal)?;
        let gz = grid_search_min(&Surrogate::Zeta(z), -SEARCH_BOUND, SEARCH_BOUND, SEARCH_STEP)?.argmin;
        let ge = grid_search_min(&Surrogate::Eta(e), -SEARCH_BOUND, SEARCH_BOUND, SEARCH_STEP)?.argmin;
        let (dz, de) = ((gz - za).abs(), (ge - ea).abs());
        worst_z = worst_z.max(dz);
        worst_e = worst_e.max(de);
        if dz > ARGMIN_TOL || de > ARGMIN_TOL {
            over += 1;
        }
        writeln!(csv, "{k},{za},{zl},{gz},{dz},{ea},{el},{ge},{de}")?;
    }
    let body = match a.report {
        Report::Csv => csv,
        Report::Summary => format!(
            "instances {}\nmax |zeta_grid - zeta_analytic| {worst_z:e}\nmax |eta_grid - eta_analytic| {worst_e:e}\n\
             instances over {ARGMIN_TOL:e}: {over}\n",
            a.instances
        ),
    };
    emit(a.out.as_deref(), &body)?;
    Ok(if over == 0 { 0 } else { 1 })
}
