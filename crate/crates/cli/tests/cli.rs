use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tail-angular"));
    cmd.env_remove("TAIL_ANGULAR_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json_of(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate_labeled(dir: &Path, name: &str, seed: &str) -> String {
    let out = dir.join(name);
    let o = run(&[
        "--seed", seed, "--out", out.to_str().unwrap(), "simulate", "--d", "2", "--n", "4000", "--nu-plus", "1",
        "--nu-minus", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_owned()
}

#[test]
fn simulate_is_reproducible_and_writes_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate_labeled(dir.path(), "a.csv", "7");
    let b = simulate_labeled(dir.path(), "b.csv", "7");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let meta = json_of(&dir.path().join("a.csv.json"));
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["n"], 4000);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 4000);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
}

#[test]
fn estimate_masses_sum_to_at_most_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_labeled(dir.path(), "a.csv", "1");
    let o = run(&["estimate", "--data", &data, "--labeled", "--k", "60", "--s-grid", "3"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("set_id,mass"));
    let masses: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(masses.len(), 6);
    let total: f64 = masses.iter().sum();
    assert!(total > 0.0 && total <= 2.0 + 1e-9);
}

#[test]
fn truncated_estimate_needs_level() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_labeled(dir.path(), "a.csv", "1");
    let o = run(&["estimate", "--data", &data, "--labeled", "--k", "60", "--estimator", "truncated"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bound_reports_json() {
    let o = run(&["bound", "--n", "100000", "--k", "316", "--d", "2"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let total = v["total"].as_f64().unwrap();
    assert!(total > 0.0);
    assert_eq!(v["conditions"].as_array().unwrap().len(), 9);
    let o = run(&["bound", "--n", "100000", "--k", "316", "--d", "2", "--classification"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["bound"].as_f64().unwrap() - 2.0 * total).abs() < 1e-12);
}

#[test]
fn bound_rejects_bad_confidence() {
    let o = run(&["bound", "--n", "1000", "--k", "30", "--d", "2", "--delta", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_a_config_error() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn classify_outputs_risks() {
    let dir = tempfile::tempdir().unwrap();
    let train = simulate_labeled(dir.path(), "train.csv", "1");
    let test = simulate_labeled(dir.path(), "test.csv", "2");
    let out = dir.path().join("r.json");
    let o = run(&[
        "--out", out.to_str().unwrap(), "classify", "--train", &train, "--test", &test, "--k", "60", "--fraction",
        "0.05",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_of(&out);
    for key in ["risk_train", "risk_test", "risk_test_truncated_model"] {
        let r = v[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&r), "{key} = {r}");
    }
    assert!(v["m"].as_f64().unwrap() > 1.0);
    assert!(v["retained_counts"]["train"].as_u64().unwrap() >= 60);
}

#[test]
fn classify_without_labels_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u.csv");
    let o = run(&["--out", out.to_str().unwrap(), "simulate", "--d", "2", "--n", "500", "--nu", "3"]);
    assert!(o.status.success());
    let p = out.to_str().unwrap();
    let o = run(&["classify", "--train", p, "--test", p, "--k", "20"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mvset_flags_test_points() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("u.csv");
    let o = run(&["--out", train.to_str().unwrap(), "simulate", "--d", "2", "--n", "5000", "--nu", "10"]);
    assert!(o.status.success());
    let scores = dir.path().join("s.csv");
    let o = run(&[
        "mvset", "--train", train.to_str().unwrap(), "--test", train.to_str().unwrap(), "--scores",
        scores.to_str().unwrap(), "--k", "70", "--alpha", "0.9", "--psi", "0.1", "--s-grid", "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["feasible"], true);
    assert!(v["mass_hat"].as_f64().unwrap() >= 0.8);
    let text = std::fs::read_to_string(&scores).unwrap();
    assert_eq!(text.lines().next(), Some("row_id,extreme,anomaly"));
    assert_eq!(text.lines().count(), 5001);
    let extremes = text.lines().skip(1).filter(|l| l.contains(",true,")).count();
    assert!(extremes > 0);
}

#[test]
fn mvset_with_loose_bound_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("u.csv");
    run(&["--out", train.to_str().unwrap(), "simulate", "--d", "2", "--n", "2000", "--nu", "10"]);
    let o = run(&["mvset", "--train", train.to_str().unwrap(), "--k", "50", "--alpha", "0.9"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn truth_and_threads_override() {
    let o = bin()
        .env("TAIL_ANGULAR_THREADS", "1")
        .args(["--threads", "4", "truth", "--d", "2", "--nu", "10", "--samples", "20000", "--s-grid", "2"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    let o = bin().env("TAIL_ANGULAR_THREADS", "many").args(["bound", "--n", "10", "--k", "5", "--d", "2"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn small_sweep_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = run(&[
        "--out", out.to_str().unwrap(), "sweep", "--n-list", "2000,4000", "--reps", "2", "--fractions", "0.1",
        "--mc-samples", "20000", "--s-grid", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    // header plus three estimators at two sample sizes
    assert_eq!(text.lines().count(), 7);
    assert!(dir.path().join("sweep.csv.json").exists());
}
