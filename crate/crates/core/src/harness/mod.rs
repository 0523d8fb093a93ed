//! Experiment configs, seeding, orchestration and CSV/JSON output.

pub mod config;
pub mod experiment;
pub mod output;
pub mod study;

pub use config::{parse_config, Budget, ConfigError, ConfigIssue, ExperimentConfig, Metric, SOLVER_NAMES};
pub use experiment::{
    compute_metrics, config_hash, generate_samples, run_experiment, run_id, stream_rng, CellRecord, ExperimentOutput,
    MetricRow, RunManifest, SampleBatch, Stream, ARTIFACT_VERSION,
};
pub use output::{
    emit_entropy_trajectory, resolve_output_dir, rows_csv, step_records_csv, write_outputs, MANIFEST_FILE,
    METRICS_FILE, OUT_DIR_ENV,
};
pub use study::run_convergence;
