use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn agg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("valid JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn error_of(out: &Output) -> Value {
    let v = json(&out.stderr);
    assert_eq!(v["exit_code"], out.status.code().unwrap());
    v["error"].clone()
}

#[test]
fn weights_report_goes_to_stdout() {
    let out = agg(&["weights", "--p", "4"]);
    assert!(out.status.success());
    let v = json(&out.stdout);
    assert_eq!(v["schema_version"], "1");
    assert_eq!(v["command"], "weights");
    assert_eq!(v["results"]["bounds_hold"], true);
    assert!((v["results"]["total_mass"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn path_writes_report_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    let x = write(dir.path(), "x.csv", "1,0\n0,1\n1,1\n0.5,-1\n");
    let y = write(dir.path(), "y.csv", "3\n1\n2\n0\n");
    let report = dir.path().join("r.json");
    let profile = dir.path().join("p.csv");
    let out = agg(&[
        "--out",
        report.to_str().unwrap(),
        "path",
        "--x",
        &x,
        "--y",
        &y,
        "--sigma",
        "0.5",
        "--profile-csv",
        profile.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = json(&std::fs::read(&report).unwrap());
    assert_eq!(v["results"]["aggregation"]["method"], "q");
    assert!(v["results"]["lambda_zero"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(&profile).unwrap();
    assert!(csv.starts_with("lambda,loss_proxy,support_size"));
    assert!(csv.lines().count() > 2);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "p = 3\n");
    let out = agg(&["--config", &cfg, "weights"]);
    assert!(out.status.success());
    assert_eq!(json(&out.stdout)["config"]["p"], 3);
    let out = agg(&["--config", &cfg, "weights", "--p", "6"]);
    assert_eq!(json(&out.stdout)["config"]["p"], 6);
}

#[test]
fn simulate_is_reproducible() {
    let args = [
        "simulate", "--n", "30", "--p", "20", "--s", "2", "--reps", "4", "--seed", "7",
    ];
    let a = json(&agg(&args).stdout);
    let b = json(&agg(&[&["--threads", "3"], &args[..]].concat()).stdout);
    assert_eq!(a["results"], b["results"]);
    assert_eq!(a["results"]["coverage"]["reps"], 4);
}

#[test]
fn missing_file_is_an_io_error() {
    let out = agg(&["path", "--x", "/no/such/x.csv", "--y", "/no/such/y.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_of(&out);
    assert_eq!(e["kind"], "io");
    assert!(e["message"].as_str().unwrap().contains("/no/such/x.csv"));
}

#[test]
fn bad_cell_reports_its_position() {
    let dir = tempfile::tempdir().unwrap();
    let x = write(dir.path(), "x.csv", "1,0\n0,1\n1,1\n");
    let y = write(dir.path(), "y.csv", "1\n2\nnan\n");
    let out = agg(&["path", "--x", &x, "--y", &y]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_of(&out);
    assert_eq!(e["kind"], "parse");
    assert_eq!(e["line"], 3);
    assert_eq!(e["column"], 1);
}

#[test]
fn usage_errors_are_json() {
    let out = agg(&["path", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["kind"], "usage");
    let out = agg(&["weights"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["kind"], "invalid_input");
}

#[test]
fn mismatched_shapes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let x = write(dir.path(), "x.csv", "1,0\n0,1\n");
    let y = write(dir.path(), "y.csv", "1\n2\n3\n");
    let out = agg(&["aggregate", "--x", &x, "--y", &y, "--sigma", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["kind"], "invalid_input");
}

#[test]
fn interpolating_fit_is_a_degenerate_variance() {
    let dir = tempfile::tempdir().unwrap();
    let x = write(dir.path(), "x.csv", "100\n");
    let y = write(dir.path(), "y.csv", "3\n");
    let out = agg(&["sqrt-pipeline", "--x", &x, "--y", &y]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["kind"], "degenerate_variance");
}

#[test]
fn non_convergence_exits_three_and_still_reports() {
    let dir = tempfile::tempdir().unwrap();
    let x = write(dir.path(), "x.csv", "1,0\n0,1\n1,1\n");
    let y = write(dir.path(), "y.csv", "3\n1\n2\n");
    let report = dir.path().join("r.json");
    let out = agg(&[
        "--out",
        report.to_str().unwrap(),
        "path",
        "--x",
        &x,
        "--y",
        &y,
        "--sigma",
        "0.5",
        "--tol-gap",
        "1e-300",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_of(&out)["kind"], "not_converged");
    let v = json(&std::fs::read(&report).unwrap());
    assert_eq!(v["results"]["aggregation"]["result"]["converged"], false);
}

#[test]
fn aggregate_accepts_estimator_rows() {
    let dir = tempfile::tempdir().unwrap();
    let x = write(dir.path(), "x.csv", "1,0,0\n0,1,0\n0,0,1\n1,1,1\n");
    let y = write(dir.path(), "y.csv", "2\n0.1\n-1\n1\n");
    let betas = write(dir.path(), "b.csv", "1,0,0\n0,0,-1\n");
    let out = agg(&[
        "aggregate",
        "--x",
        &x,
        "--y",
        &y,
        "--sigma",
        "0.3",
        "--betas",
        &betas,
        "--method",
        "crit",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = json(&out.stdout);
    assert_eq!(v["command"], "aggregate");
}
