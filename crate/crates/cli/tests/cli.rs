use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irs-crb")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn solve_prints_a_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.toml", "seed = 3\n[params]\nn_irs = 4\n");
    let out = run(&["solve", &scenario, "--baselines"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let worst = report["worst_crb"].as_f64().unwrap();
    assert!(worst > 0.0);
    let baselines = report["baselines"].as_array().unwrap();
    assert_eq!(baselines.len(), 3);
    assert!(baselines.iter().all(|b| b["worst_crb"].as_f64().unwrap() >= worst * (1.0 - 1e-12) || b["scheme"] == "random-phase"));
}

#[test]
fn check_passes_on_a_solved_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.toml", "seed = 1\n[params]\nn_irs = 3\nn_targets = 2\n");
    let out = run(&["check", &scenario]);
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{log}");
    assert!(log.lines().filter(|l| l.starts_with("PASS")).count() >= 6);
    assert!(!log.contains("FAIL"));
}

#[test]
fn sweep_with_failed_rows_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rows.csv");
    let plan = write(
        dir.path(),
        "plan.toml",
        &format!("sweep = \"K\"\nvalues = [1, 2]\ntrials = 1\nschemes = [\"equal-power\"]\nout = {:?}\n", csv),
    );
    let out = run(&["sweep", &plan]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn invalid_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "seed = 1\n[params]\nn_irs = 4\nbogus = 1\n");
    assert_eq!(run(&["solve", &bad]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(run(&["check", missing.to_str().unwrap()]).status.code(), Some(2));
    let plan = write(dir.path(), "plan.toml", "sweep = \"K\"\nvalues = []\nschemes = [\"two-stage\"]\nout = \"x.csv\"\n");
    assert_eq!(run(&["sweep", &plan]).status.code(), Some(2));
    let plan = write(dir.path(), "plan2.toml", "sweep = \"K\"\nvalues = [2]\nschemes = [\"best\"]\nout = \"x.csv\"\n");
    assert_eq!(run(&["sweep", &plan]).status.code(), Some(2));
}
