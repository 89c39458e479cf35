use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn metamap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metamap")).args(args).output().expect("binary runs")
}

fn small_run(out: &Path) -> Output {
    metamap(&["run", "--scenario", "builtin:family_a", "--grid", "600", "--eps", "0.02,0.01", "--out", out.to_str().unwrap()])
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_run(dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("eps,"));
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    for f in ["sweep.json", "hypotheses.json", "densities.svg", "l1_vs_eps.svg", "rho_vs_eps.svg"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    for eps in ["0.02", "0.01"] {
        let density = fs::read_to_string(dir.path().join(format!("density_eps_{eps}.csv"))).unwrap();
        assert_eq!(density.lines().count(), 601);
        assert!(dir.path().join(format!("saltus_eps_{eps}.csv")).is_file());
    }
}

#[test]
fn runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(small_run(a.path()).status.code(), Some(0));
    assert_eq!(small_run(b.path()).status.code(), Some(0));
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 9);
    for name in names {
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?} differs");
    }
}

#[test]
fn unwritable_output_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = small_run(&blocker.join("sub"));
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn invalid_scenarios_are_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"name": "x", "builtin": "family_a", "grid": "many"}"#).unwrap();
    let out = metamap(&["run", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid"));

    let out = metamap(&["run", "--scenario", "builtin:family_a", "--grid", "601", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = metamap(&["run", "--scenario", "builtin:nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn markov_prints_closed_form() {
    let out = metamap(&["markov", "--eps-lr", "0.01", "--eps-rl", "0.03"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("alpha = 0.75"));
    assert!(text.contains("rho = 0.96"));
    assert_eq!(metamap(&["markov", "--eps-lr", "0", "--eps-rl", "0"]).status.code(), Some(1));
}

#[test]
fn markov_scenario_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = metamap(&["run", "--scenario", "builtin:markov2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(fs::read_to_string(dir.path().join("markov.csv")).unwrap().lines().count() >= 2);
}

#[test]
fn validate_flags_family_b() {
    assert_eq!(metamap(&["validate", "--scenario", "builtin:family_a"]).status.code(), Some(0));
    let out = metamap(&["validate", "--scenario", "builtin:family_b"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("P2: false"));
}
