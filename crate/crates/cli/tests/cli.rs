use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn evodiff(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evodiff"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EVODIFF_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn sample_writes_step_records() {
    let dir = tempfile::tempdir().unwrap();
    let o = evodiff(
        &[
            "sample",
            "--solver",
            "evodiff",
            "--steps",
            "10",
            "--mu",
            "0.5",
            "--r-strategy",
            "logsnr",
            "--reuse-probe",
            "--seed",
            "7",
            "--out",
            "run.csv",
            "--samples",
            "4",
            "--samples-out",
            "x.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let body = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("i,t_i,nfe,r,zeta,eta,zeta_raw,eta_raw,fallback"));
    let nfe: usize = lines
        .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(nfe, 11);
    let samples = fs::read_to_string(dir.path().join("x.csv")).unwrap();
    assert_eq!(samples.lines().count(), 5);
}

#[test]
fn sample_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sample", "--solver", "dpmpp2m", "--nfe", "8", "--seed", "3", "--dist", "gmm",
    ];
    let a = evodiff(&args, dir.path());
    let b = evodiff(&args, dir.path());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = evodiff(
        &["sample", "--solver", "bogus", "--steps", "0", "--seed", "1"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("solver") && err.contains("steps"), "{err}");

    fs::write(
        dir.path().join("c.toml"),
        "solver = \"ddim\"\nsteps = 4\nseed = 1\ncolour = 3\n",
    )
    .unwrap();
    let o = evodiff(&["sample", "--config", "c.toml"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "solver = \"ddim\"\nsteps = 4\nseed = 1\ndist = \"gaussian\"\n[evodiff]\nmu = 0.25\n",
    )
    .unwrap();
    let o = evodiff(
        &[
            "sample",
            "--config",
            "c.toml",
            "--solver",
            "evodiff",
            "--nfe",
            "6",
            "--fresh-probe",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    // A fresh-probe run of N steps costs 2N-1 evaluations; 6 allows N = 3.
    assert!(
        err.contains("mu=0.25") && err.contains("fresh") && err.contains("N = 3, 5 evaluations"),
        "{err}"
    );
}

#[test]
fn compare_writes_metrics_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = evodiff(
        &[
            "compare",
            "--solvers",
            "ddim,evodiff",
            "--nfe",
            "5,10",
            "--seeds",
            "1,2",
            "--samples",
            "50",
            "--metrics",
            "mean_error,frechet",
            "--out",
            "res",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(dir.path().join("res/metrics.csv")).unwrap();
    assert!(metrics.starts_with("run_id,solver,N,nfe,seed,metric_name,value\n"));
    assert_eq!(metrics.lines().count(), 1 + 2 * 2 * 2 * 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("res/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cells"].as_array().unwrap().len(), 8);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn output_directory_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_evodiff"))
        .args([
            "compare",
            "--solvers",
            "ddim",
            "--steps",
            "3",
            "--seeds",
            "1",
            "--samples",
            "10",
            "--out",
            "ignored",
        ])
        .current_dir(dir.path())
        .env("EVODIFF_OUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(target.join("metrics.csv").exists());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn partial_and_total_failures_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    // Heun needs two evaluations per step, so a budget of one leaves no steps.
    let common = [
        "--nfe",
        "1",
        "--seeds",
        "1",
        "--samples",
        "10",
        "--metrics",
        "mean_error",
    ];
    let mut partial = vec!["compare", "--solvers", "heun,ddim", "--out", "p"];
    partial.extend(common);
    assert_eq!(code(&evodiff(&partial, dir.path())), 1);
    let mut total = vec!["compare", "--solvers", "heun", "--out", "t"];
    total.extend(common);
    assert_eq!(code(&evodiff(&total, dir.path())), 2);
    assert!(dir.path().join("t/manifest.json").exists());
}

#[test]
fn convergence_reports_error_and_slope_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = evodiff(
        &[
            "convergence",
            "--solvers",
            "ddim,dpmpp2m",
            "--Ns",
            "20,40",
            "--ref",
            "640",
            "--trials",
            "4",
            "--seeds",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let slopes: Vec<f64> = out
        .lines()
        .filter(|l| l.contains(",slope,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(slopes.len(), 2);
    // Rows sort by solver: ddim first.
    assert!(slopes[0] > 0.7 && slopes[0] < 1.3 && slopes[1] > 1.5, "{out}");
}

#[test]
fn diagnose_checks_emit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let heads = [
        (
            "decomposition",
            "i,t_i,t_next,n,mse,variance_term,bias_term,residual,standard_error",
        ),
        ("entropy-scan", "var_ratio,ratio,lower,upper,delta_h,inside"),
        ("variance-order", "i,t_i,coef_data,coef_noise,var_data,var_noise"),
        ("entropy", "i,t_i,var_estimate,entropy_estimate"),
    ];
    for (check, head) in heads {
        let o = evodiff(
            &["diagnose", "--check", check, "--steps", "6", "--samples", "500"],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{check}: {}", String::from_utf8_lossy(&o.stderr));
        let out = String::from_utf8(o.stdout).unwrap();
        assert_eq!(out.lines().next(), Some(head));
    }
    let o = evodiff(
        &["diagnose", "--check", "entropy", "--dist", "gmm", "--steps", "4"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn oracle_check_matches_the_grid_search() {
    let dir = tempfile::tempdir().unwrap();
    let o = evodiff(
        &["oracle-check", "--instances", "20", "--seed", "3", "--report", "csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 21);
    for line in out.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(f[4] <= 2e-4 && f[8] <= 2e-4, "{line}");
        assert_eq!(f[1], -f[2]);
    }
}
