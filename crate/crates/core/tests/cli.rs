use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use irpg_core::examples::{opt_not_ctrb_instance, peril_instance, peril_k0};
use irpg_core::io::{write_json, RunSummary, RUN_CSV_HEADER};
use irpg_core::model::normalized_suboptimality;
use irpg_core::Filter;
use serde_json::Value;

fn irpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irpg")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_care_prints_golden_values() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    write_json(&inst, &opt_not_ctrb_instance()).unwrap();
    let v = stdout_json(&irpg(&["solve-care", "--instance", path(&inst)]));
    let p = &v["P"];
    assert!((p[0][0].as_f64().unwrap() - 16.0).abs() < 1e-8);
    assert!((p[0][1].as_f64().unwrap() + 12.0).abs() < 1e-8);
    assert!((v["L"][0][0].as_f64().unwrap() - 4.0).abs() < 1e-8);
}

#[test]
fn solve_lyap_from_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("lyap.json");
    fs::write(&input, r#"{"A": [[-1.0]], "Q": [[4.0]]}"#).unwrap();
    let v = stdout_json(&irpg(&["solve-lyap", "--input", path(&input)]));
    assert!((v["X"][0][0].as_f64().unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn kalman_output_reads_back_as_filter() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    let out = dir.path().join("k.json");
    write_json(&inst, &peril_instance()).unwrap();
    let o = irpg(&["kalman", "--instance", path(&inst), "--out", path(&out), "--seed", "7"]);
    assert!(o.status.success());
    let k: Filter = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(normalized_suboptimality(&peril_instance(), &k).unwrap() < 1e-12);
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    let init = dir.path().join("init.json");
    let out = dir.path().join("run");
    write_json(&inst, &peril_instance()).unwrap();
    write_json(&init, &peril_k0()).unwrap();
    let o = irpg(&[
        "run", "--instance", path(&inst), "--init", path(&init), "--alg", "plain-gd",
        "--max-iters", "50", "--out", path(&out), "--seed", "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("run.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(RUN_CSV_HEADER));
    assert_eq!(lines.count(), 50);
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.iters, 50);
    assert_eq!(summary.seed, Some(3));
}

#[test]
fn run_is_reproducible_from_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = irpg(&["run", "--seed", "11", "--max-iters", "30", "--out", path(d)]);
        assert!(o.status.success());
    }
    assert_eq!(fs::read(a.join("run.csv")).unwrap(), fs::read(b.join("run.csv")).unwrap());
}

#[test]
fn suite_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = irpg(&[
        "suite", "--trials", "2", "--alg", "plain-gd,irpg-backtrack", "--max-iters", "20", "--seed", "5",
        "--out", path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in [
        "trial_0_plain-gd.csv",
        "trial_1_irpg-backtrack.csv",
        "percentiles_plain-gd.csv",
        "percentiles_irpg-backtrack.csv",
        "summary.json",
    ] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
}

#[test]
fn gradcheck_reports_small_error() {
    let v = stdout_json(&irpg(&["gradcheck", "--seed", "2"]));
    assert!(v["rel_err"].as_f64().unwrap() < 1e-5);
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(irpg(&["run", "--alg", "nope"]).status.code(), Some(2));
    assert_eq!(irpg(&["run", "--set", "unknown_key=1"]).status.code(), Some(2));
    assert_eq!(irpg(&["run", "--eta", "-1"]).status.code(), Some(2));
    assert_eq!(irpg(&["solve-care", "--instance", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn set_overrides_reach_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = irpg(&["run", "--seed", "4", "--set", "max_iters=7", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
}
