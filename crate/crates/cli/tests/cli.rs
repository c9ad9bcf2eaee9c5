use std::fs;
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim")).args(args).output().expect("binary runs")
}

fn json_line(bytes: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(bytes);
    serde_json::from_str(text.lines().last().expect("one line")).expect("machine-readable line")
}

const SMALL: &str = r#"
algorithms = ["proposed", "nearby"]
seeds = [1, 2]

[scenario]
n_devices = 6

[ao]
t_max = 3
"#;

#[test]
fn validate_reports_cell_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = sim(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let v = json_line(&out.stdout);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["cells"], 4);
}

#[test]
fn run_writes_the_csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    let out = sim(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--workers", "1", "--dump"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json_line(&out.stdout)["rows"], 4);
    for f in ["metrics.csv", "summary.csv", "convergence.csv", "improvement.csv", "timing.csv", "manifest.json"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    assert!(out_dir.join("solution_nearby_n_devices6_seed2.json").is_file());
}

#[test]
fn algo_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    let out = sim(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--algo", "computing,max-min"]);
    assert!(out.status.success());
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().filter(|l| l.starts_with("computing,")).count(), 2);
    assert_eq!(metrics.lines().filter(|l| l.starts_with("max-min,")).count(), 2);
    assert!(!metrics.contains("proposed"));
}

#[test]
fn sweep_without_config_uses_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = sim(&[
        "sweep",
        "--param",
        "n_devices",
        "--values",
        "3,5",
        "--seeds",
        "1",
        "--algo",
        "gale-shapley",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn bad_config_gives_a_json_error_and_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seeds = [1, 1]\n").unwrap();
    let out = sim(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v = json_line(&out.stderr);
    assert_eq!(v["status"], "error");
    assert!(v["error"].as_str().unwrap().contains("distinct"));
}

#[test]
fn unknown_algorithm_is_a_usage_error() {
    let out = sim(&["sweep", "--param", "n_bs", "--values", "2", "--algo", "greedy"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_line(&out.stderr)["kind"], "usage");
}

#[test]
fn missing_config_file_is_a_runtime_error() {
    let out = sim(&["run", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(json_line(&out.stderr)["error"].as_str().unwrap().contains("/nonexistent/exp.toml"));
}
