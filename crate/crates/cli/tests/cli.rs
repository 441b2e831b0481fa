use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn couette(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_couette"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("COUETTE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn check_meta(meta: &Value, command: &str) {
    assert_eq!(meta["command"], command);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert!(meta["version"].as_str().unwrap().starts_with("couette-core "));
    assert!(meta["grid"]["n"].as_u64().unwrap() > 0);
}

const SMALL_SCAN: &[&str] = &["resolvent", "--k", "1", "--n", "128", "--points", "24"];

#[test]
fn missing_b_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = couette(dir.path(), &["resolvent", "--k", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--B"));
}

#[test]
fn resolvent_writes_stamped_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = couette(dir.path(), &[SMALL_SCAN, &["--B", "1e3"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let j = json(&dir.path().join("resolvent-k1-B1e3.json"));
    check_meta(&j["meta"], "resolvent");
    assert!(j["result"]["psi"].as_f64().unwrap() > 0.0);
    let csv = fs::read_to_string(dir.path().join("resolvent-k1-B1e3.csv")).unwrap();
    assert!(csv.starts_with("# command: resolvent\n"));
    assert!(csv.contains("# config_hash: "));
    assert!(csv.contains("# grid: n=128 r_max=20 scheme=uniform"));
    assert!(csv.lines().any(|l| l == "s,sigma_min"));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [SMALL_SCAN, &["--B-list", "1e2,1e3", "--fit"]].concat();
    assert!(couette(a.path(), &args).status.success());
    assert!(couette(b.path(), &args).status.success());
    for name in ["resolvent-k1-B1e2.json", "resolvent-k1-B1e3.csv", "resolvent-fit-k1.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let fit = json(&a.path().join("resolvent-fit-k1.json"));
    assert!(fit["result"]["fit"]["slope"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scan.json");
    fs::write(&cfg, r#"{"k": 2, "b": 100.0, "grid": {"n": 128, "r_max": 20.0, "scheme": "uniform"}, "points": 24}"#).unwrap();
    let out = couette(dir.path(), &["resolvent", "--config", cfg.to_str().unwrap(), "--B", "1e3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let j = json(&dir.path().join("resolvent-k2-B1e3.json"));
    assert_eq!(j["meta"]["config"]["k"], 2);
    assert_eq!(j["meta"]["config"]["b"], 1000.0);
}

#[test]
fn invalid_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"b": 1000.0, "grid": {"n": 2, "r_max": 20.0, "scheme": "uniform"}}"#).unwrap();
    let out = couette(dir.path(), &["resolvent", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n >= 16"));
    fs::write(&cfg, "{not json").unwrap();
    let out = couette(dir.path(), &["resolvent", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_couette"))
        .args(["simulate", "--amplitude", "0", "--n", "64", "--k-max", "1", "--tau-end", "0.05", "--energy-c", "0.1"])
        .env("COUETTE_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(target.join("simulate.json").exists());
}

#[test]
fn zero_initial_data_gives_zero_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out = couette(
        dir.path(),
        &["simulate", "--amplitude", "0", "--n", "128", "--k-max", "2", "--tau-end", "0.1", "--energy-c", "0.1"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let j = json(&dir.path().join("simulate.json"));
    check_meta(&j["meta"], "simulate");
    assert_eq!(j["result"]["energy"]["total"], 0.0);
    assert_eq!(j["result"]["verdict"], "Decaying");
    let csv = fs::read_to_string(dir.path().join("simulate-norms.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("tau,")));
}

#[test]
fn sweep_reports_thresholds_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = couette(
        dir.path(),
        &["sweep", "--B-list", "1e3,1e4", "--amplitudes", "1,1e6", "--n", "96", "--k-max", "1", "--dt", "5e-3"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep-thresholds.csv")).unwrap();
    assert!(csv.contains("# slope: "));
    assert!(csv.lines().any(|l| l == "b,threshold,decaying,failing"));
    let j = json(&dir.path().join("sweep.json"));
    check_meta(&j["meta"], "sweep");
    assert_eq!(j["result"]["table"]["thresholds"].as_array().unwrap().len(), 2);
}

#[test]
fn quick_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = couette(dir.path(), &["verify", "--quick"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 7, "{stdout}");
    let j = json(&dir.path().join("verify.json"));
    assert_eq!(j["result"]["all_pass"], true);
}
