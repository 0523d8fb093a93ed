//! Experiment matrix execution, seeding and result collection.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Metric};
use super::output::{emit_entropy_trajectory, step_records_csv};
use crate::diagnostics::{entropy_trajectory, frechet_from_moments, sample_moments, sliced_wasserstein};
use crate::error::{invalid, Result};
use crate::oracle::{DataDistribution, Denoiser, DenoiserOracle};
use crate::schedule::{make_grid, NoiseSchedule, TimeGrid};
use crate::solver::{draw_initial, run, SolverKind, StepRecord};

/// Version string written into manifests.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Independent random streams derived from one root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Initial states `x_T`.
    Noise = 0,
    /// Exact data samples and other Monte-Carlo draws.
    MonteCarlo = 1,
    /// Sliced-Wasserstein projection directions.
    Projections = 2,
}

/// ChaCha8 generator for `stream` of `seed`. Streams never overlap, so adding
/// a metric does not change the samples.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// SHA-256 of the canonical JSON form of the config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub solver: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub nfe: usize,
    pub seed: u64,
    pub metric_name: String,
    pub value: f64,
}

/// Manifest entry for one `(solver, N, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub run_id: String,
    pub solver: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub nfe: Option<usize>,
    pub metrics: BTreeMap<String, f64>,
    pub wall_time_ms: f64,
    pub error: Option<String>,
    pub step_records: Option<String>,
    pub trajectory: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub metrics_file: String,
    pub cells: Vec<CellRecord>,
}

impl RunManifest {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    /// 0 when every cell succeeded, 1 when some failed, 2 when all failed.
    pub fn exit_code(&self) -> i32 {
        match self.failed() {
            0 => 0,
            f if f == self.cells.len() => 2,
            _ => 1,
        }
    }
}

/// Everything an experiment produces, before it is written to disk.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricRow>,
    pub manifest: RunManifest,
    /// File name to CSV body.
    pub extra_files: BTreeMap<String, String>,
}

/// File-name-safe form of a solver label.
pub fn slug(label: &str) -> String {
    let mut s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect();
    while s.ends_with('_') {
        s.pop();
    }
    s
}

pub fn run_id(kind: &SolverKind, n: usize, seed: u64) -> String {
    format!("{}_n{n}_s{seed}", slug(&kind.label()))
}

/// Samples from one solver configuration.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    /// `samples × d`.
    pub x0: Array2<f64>,
    pub initial: Vec<Array1<f64>>,
    /// Oracle evaluations per trajectory.
    pub nfe: usize,
    /// Step records of the first trajectory.
    pub first_records: Vec<StepRecord>,
}

/// Draw `count` initial states from the noise stream of `seed` and integrate each.
pub fn generate_samples(
    kind: &SolverKind,
    distribution: &DataDistribution,
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    count: usize,
    seed: u64,
) -> Result<SampleBatch> {
    if count == 0 {
        return Err(invalid("need at least one sample"));
    }
    let d = distribution.dim();
    let mut rng = stream_rng(seed, Stream::Noise);
    let mut oracle = DenoiserOracle::new(
        distribution.clone(),
        schedule.clone(),
        kind.preferred_parameterization(),
    );
    let mut x0 = Array2::zeros((count, d));
    let mut initial = Vec::with_capacity(count);
    let mut first_records = Vec::new();
    let mut nfe = 0;
    for k in 0..count {
        let x_t = draw_initial(schedule, grid, d, &mut rng)?;
        let before = oracle.evaluations();
        let out = run(kind, &mut oracle, grid, schedule, x_t.view())?;
        if k == 0 {
            nfe = oracle.evaluations() - before;
            first_records = out.records;
        }
        x0.row_mut(k).assign(&out.x0);
        initial.push(x_t);
    }
    Ok(SampleBatch {
        x0,
        initial,
        nfe,
        first_records,
    })
}

/// Values of the requested metrics for one batch.
pub fn compute_metrics(
    metrics: &[Metric],
    samples: &Array2<f64>,
    distribution: &DataDistribution,
    reference_samples: usize,
    projections: usize,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for m in metrics {
        let value = match m {
            Metric::SlicedWasserstein => {
                let mut mc = stream_rng(seed, Stream::MonteCarlo);
                let d = distribution.dim();
                let mut reference = Array2::zeros((reference_samples, d));
                for mut row in reference.axis_iter_mut(Axis(0)) {
                    row.assign(&distribution.sample(&mut mc));
                }
                let mut proj = stream_rng(seed, Stream::Projections);
                sliced_wasserstein(samples.view(), reference.view(), projections, &mut proj)?
            }
            Metric::Frechet => {
                let (mean, cov) = sample_moments(samples.view())?;
                frechet_from_moments(&mean, &cov, &distribution.mean(), &distribution.covariance())?
            }
            Metric::MeanError => {
                let diff = samples.mean_axis(Axis(0)).expect("non-empty") - distribution.mean();
                diff.dot(&diff).sqrt()
            }
        };
        out.insert(m.name().to_string(), value);
    }
    Ok(out)
}

struct Cell {
    kind: SolverKind,
    n: usize,
    seed: u64,
}

struct CellResult {
    record: CellRecord,
    files: Vec<(String, String)>,
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> CellResult {
    let started = Instant::now();
    let id = run_id(&cell.kind, cell.n, cell.seed);
    let mut record = CellRecord {
        run_id: id.clone(),
        solver: cell.kind.label(),
        n: cell.n,
        seed: cell.seed,
        nfe: None,
        metrics: BTreeMap::new(),
        wall_time_ms: 0.0,
        error: None,
        step_records: None,
        trajectory: None,
    };
    let mut files = Vec::new();
    let outcome = (|| -> Result<()> {
        if cell.n == 0 {
            return Err(invalid("NFE budget too small for one step"));
        }
        let grid = make_grid(&cfg.schedule, cfg.grid, cell.n, cfg.t_start, cfg.t_end)?;
        let batch = generate_samples(
            &cell.kind,
            &cfg.distribution,
            &cfg.schedule,
            &grid,
            cfg.samples,
            cell.seed,
        )?;
        record.nfe = Some(batch.nfe);
        record.metrics = compute_metrics(
            &cfg.metrics,
            &batch.x0,
            &cfg.distribution,
            cfg.reference_samples,
            cfg.projections,
            cell.seed,
        )?;
        if cfg.step_records {
            let name = format!("steps_{id}.csv");
            files.push((name.clone(), step_records_csv(&batch.first_records)));
            record.step_records = Some(name);
        }
        if cfg.trajectory {
            let traj = entropy_trajectory(&cell.kind, &cfg.distribution, &cfg.schedule, &grid, &batch.initial)?;
            let name = format!("trajectory_{id}.csv");
            files.push((name.clone(), emit_entropy_trajectory(&traj)));
            record.trajectory = Some(name);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        record.error = Some(e.to_string());
        record.metrics.clear();
        files.clear();
    }
    record.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    CellResult { record, files }
}

/// Run every `(solver, N, seed)` cell in parallel. Failed cells are recorded in
/// the manifest and contribute no rows. Rows are sorted, so the CSV body does
/// not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> ExperimentOutput {
    let mut cells = Vec::new();
    for kind in &cfg.solvers {
        for n in cfg.budget.resolve(kind) {
            for &seed in &cfg.seeds {
                cells.push(Cell { kind: *kind, n, seed });
            }
        }
    }
    let results: Vec<CellResult> = cells.par_iter().map(|c| run_cell(cfg, c)).collect();

    let mut rows = Vec::new();
    let mut records = Vec::with_capacity(results.len());
    let mut extra_files = BTreeMap::new();
    for r in results {
        if let Some(nfe) = r.record.nfe {
            for (name, &value) in &r.record.metrics {
                rows.push(MetricRow {
                    run_id: r.record.run_id.clone(),
                    solver: r.record.solver.clone(),
                    n: r.record.n,
                    nfe,
                    seed: r.record.seed,
                    metric_name: name.clone(),
                    value,
                });
            }
        }
        extra_files.extend(r.files);
        records.push(r.record);
    }
    sort_rows(&mut rows);
    records.sort_by(|a, b| (&a.solver, a.n, a.seed).cmp(&(&b.solver, b.n, b.seed)));
    ExperimentOutput {
        rows,
        manifest: RunManifest {
            config_hash: config_hash(cfg),
            artifact_version: ARTIFACT_VERSION.to_string(),
            metrics_file: super::output::METRICS_FILE.to_string(),
            cells: records,
        },
        extra_files,
    }
}

pub(crate) fn sort_rows(rows: &mut [MetricRow]) {
    rows.sort_by(|a, b| {
        (&a.solver, a.n, a.seed, &a.metric_name, &a.run_id).cmp(&(&b.solver, b.n, b.seed, &b.metric_name, &b.run_id))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;
    use crate::harness::output::rows_csv;

    fn cfg(text: &str) -> ExperimentConfig {
        parse_config(text).unwrap()
    }

    #[test]
    fn one_solver_one_seed_gives_one_row_per_metric() {
        let c = cfg("solver = \"ddim\"\nsteps = 5\nseed = 1\nsamples = 50\nreference_samples = 200\n");
        let out = run_experiment(&c);
        assert_eq!(out.rows.len(), 3);
        assert_eq!(out.manifest.cells.len(), 1);
        assert_eq!(out.manifest.exit_code(), 0);
    }

    #[test]
    fn matrix_has_every_cell_and_the_documented_nfe() {
        let c = cfg(
            "solvers = [\"ddim\", \"heun\", \"evodiff\"]\nsteps = [5, 10, 20]\nseeds = [1, 2, 3, 4]\n\
             samples = 4\nmetrics = [\"mean_error\"]\n",
        );
        let out = run_experiment(&c);
        assert_eq!(out.manifest.cells.len(), 36);
        assert_eq!(out.rows.len(), 36);
        for cell in &out.manifest.cells {
            let kind = c.solvers.iter().find(|k| k.label() == cell.solver).unwrap();
            assert_eq!(cell.nfe, Some(kind.expected_nfe(cell.n)));
        }
        let ids: std::collections::BTreeSet<_> = out.manifest.cells.iter().map(|c| &c.run_id).collect();
        assert_eq!(ids.len(), 36);
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let c = cfg(
            "solvers = [\"dpmpp2m\", \"evodiff\"]\nsteps = [4, 8]\nseeds = [3, 4]\nsamples = 20\n\
             reference_samples = 100\nstep_records = true\n",
        );
        let a = run_experiment(&c);
        let b = run_experiment(&c);
        assert_eq!(rows_csv(&a.rows).unwrap(), rows_csv(&b.rows).unwrap());
        assert_eq!(a.extra_files, b.extra_files);
    }

    #[test]
    fn streams_are_independent() {
        use rand::Rng;
        let a: u64 = stream_rng(7, Stream::Noise).random();
        let b: u64 = stream_rng(7, Stream::MonteCarlo).random();
        let c: u64 = stream_rng(7, Stream::Noise).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn adding_a_metric_does_not_change_the_others() {
        let base = "solver = \"ddim\"\nsteps = 5\nseed = 2\nsamples = 30\nreference_samples = 100\n";
        let one = run_experiment(&cfg(&format!("{base}metrics = [\"sliced_wasserstein\"]\n")));
        let all = run_experiment(&cfg(base));
        let sw = |o: &ExperimentOutput| {
            o.rows
                .iter()
                .find(|r| r.metric_name == "sliced_wasserstein")
                .unwrap()
                .value
        };
        assert_eq!(sw(&one), sw(&all));
    }

    #[test]
    fn config_hash_ignores_key_order() {
        let a = cfg("solver = \"ddim\"\nsteps = 5\nseed = 1\ndim = 3\n");
        let b = cfg("dim = 3\nseed = 1\nsteps = 5\nsolver = \"ddim\"\n");
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = cfg("solver = \"ddim\"\nsteps = 6\nseed = 1\ndim = 3\n");
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn failed_cells_are_recorded() {
        // One NFE cannot pay for a Heun step; the DDIM cell still runs.
        let c = cfg("solvers = [\"ddim\", \"heun\"]\nnfe = 1\nseed = 1\nsamples = 3\nmetrics = [\"mean_error\"]\n");
        let out = run_experiment(&c);
        assert_eq!(out.manifest.failed(), 1);
        assert_eq!(out.manifest.exit_code(), 1);
        assert_eq!(out.rows.len(), 1);
    }

    #[test]
    fn single_step_run_has_one_trajectory_row() {
        let c =
            cfg("solver = \"ddim\"\nsteps = 1\nseed = 1\nsamples = 5\nmetrics = [\"mean_error\"]\ntrajectory = true\n");
        let out = run_experiment(&c);
        let body = out.extra_files.values().next().unwrap();
        assert_eq!(body.lines().count(), 2);
    }
}
