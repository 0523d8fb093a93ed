//! CSV and JSON output.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::experiment::{ExperimentOutput, MetricRow};
use crate::diagnostics::EntropyRecord;
use crate::error::{Error, Result};
use crate::solver::StepRecord;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "EVODIFF_OUT_DIR";

fn io(e: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("output: {e}"))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Metric rows as CSV with header `run_id,solver,N,nfe,seed,metric_name,value`.
pub fn rows_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    if rows.is_empty() {
        w.write_record(["run_id", "solver", "N", "nfe", "seed", "metric_name", "value"])
            .map_err(io)?;
    }
    String::from_utf8(w.into_inner().map_err(io)?).map_err(io)
}

/// Per-step variance trajectory: `i,t_i,var_estimate,entropy_estimate`.
pub fn emit_entropy_trajectory(records: &[EntropyRecord]) -> String {
    let mut out = String::from("i,t_i,var_estimate,entropy_estimate\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.i, r.t, r.var_estimate, r.entropy_estimate));
    }
    out
}

/// Per-step solver diagnostics.
pub fn step_records_csv(records: &[StepRecord]) -> String {
    let mut out = String::from("i,t_i,nfe,r,zeta,eta,zeta_raw,eta_raw,fallback\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.i,
            r.t,
            r.nfe,
            opt(r.r),
            opt(r.zeta),
            opt(r.eta),
            opt(r.zeta_raw),
            opt(r.eta_raw),
            r.fallback
        ));
    }
    out
}

/// The configured output directory, unless [`OUT_DIR_ENV`] is set.
pub fn resolve_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.output.clone(),
    }
}

/// Write `metrics.csv`, `manifest.json` and any per-run files into `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join(METRICS_FILE), rows_csv(&out.rows)?).map_err(io)?;
    let manifest = serde_json::to_string_pretty(&out.manifest).map_err(io)?;
    fs::write(dir.join(MANIFEST_FILE), manifest + "\n").map_err(io)?;
    for (name, body) in &out.extra_files {
        fs::write(dir.join(name), body).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{parse_config, run_experiment};

    #[test]
    fn header_is_written_for_empty_output() {
        assert_eq!(rows_csv(&[]).unwrap(), "run_id,solver,N,nfe,seed,metric_name,value\n");
    }

    #[test]
    fn rows_round_trip() {
        let row = MetricRow {
            run_id: "ddim_n5_s1".into(),
            solver: "ddim".into(),
            n: 5,
            nfe: 5,
            seed: 1,
            metric_name: "frechet".into(),
            value: 0.125,
        };
        let body = rows_csv(std::slice::from_ref(&row)).unwrap();
        assert_eq!(
            body,
            "run_id,solver,N,nfe,seed,metric_name,value\nddim_n5_s1,ddim,5,5,1,frechet,0.125\n"
        );
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let back: MetricRow = r.deserialize().next().unwrap().unwrap();
        assert_eq!(back, row);
    }

    #[test]
    fn outputs_land_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config(
            "solver = \"evodiff\"\nsteps = 4\nseed = 1\nsamples = 5\nmetrics = [\"mean_error\"]\n\
             step_records = true\ntrajectory = true\n",
        )
        .unwrap();
        let out = run_experiment(&cfg);
        write_outputs(&out, dir.path()).unwrap();
        let names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names.len(), 4, "{names:?}");
        let steps = fs::read_to_string(dir.path().join(out.manifest.cells[0].step_records.as_ref().unwrap())).unwrap();
        assert_eq!(steps.lines().count(), 5);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest["cells"].as_array().unwrap().len(), 1);
    }
}
