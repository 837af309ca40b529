use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(sub: &str, dir: &Path, config: &str, out: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{out}.json"));
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_gcy"))
        .arg(sub)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join(out))
        .args(extra)
        .env_remove("GCY_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

#[test]
fn validate_accepts_twisted_structure() {
    let dir = TempDir::new().unwrap();
    let o = run("validate", dir.path(), r#"{"structure": {"kind": "twisted"}, "grid": 8}"#, "v", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(dir.path().join("v/validation.json"));
    assert_eq!(rep["passed"], true);
    assert!(dir.path().join("v/summary.txt").exists());
    assert!(dir.path().join("v/config.json").exists());
}

#[test]
fn non_symplectic_generator_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let id: Vec<String> = (0..16).map(|k| if k % 5 == 0 { "1.0" } else { "0.0" }.to_string()).collect();
    let cfg = format!(
        r#"{{"structure": {{"kind": "twisted", "generator": [{}]}}, "grid": 8}}"#,
        id.join(",")
    );
    let o = run("validate", dir.path(), &cfg, "v", &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn unknown_keys_and_mismatched_commands_are_rejected() {
    let dir = TempDir::new().unwrap();
    let o = run(
        "analyze",
        dir.path(),
        r#"{"structure": {"kind": "standard"}, "grid": 8, "tolerance": 1e-3}"#,
        "a",
        &[],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("tolerance"));
    let o = run(
        "analyze",
        dir.path(),
        r#"{"command": "solve", "structure": {"kind": "standard"}, "grid": 8}"#,
        "b",
        &[],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn analyze_writes_reports_and_reproduces_them() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"structure": {"kind": "twisted"}, "grid": 8, "potential": "0.01*sin(x1)*cos(y2) + 0.02*cos(x2)"}"#;
    let first = run("analyze", dir.path(), cfg, "a", &[]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    for f in ["report.json", "fields.csv", "phi.gcyf", "F.gcyf", "summary.txt"] {
        assert!(dir.path().join("a").join(f).exists(), "{f} missing");
    }
    let rep = json(dir.path().join("a/report.json"));
    assert!(rep.to_string().contains("F_min"));
    let second = run("analyze", dir.path(), cfg, "b", &[]);
    assert_eq!(code(&second), 0);
    for f in ["report.json", "fields.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn grid_override_replaces_config_grid() {
    let dir = TempDir::new().unwrap();
    let o = run(
        "analyze",
        dir.path(),
        r#"{"structure": {"kind": "standard"}, "grid": 8, "potential": "0.01*sin(x1)"}"#,
        "a",
        &["--grid-override", "8,8,8,10"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(dir.path().join("a/config.json"))["grid"], serde_json::json!([8, 8, 8, 10]));
}

#[test]
fn boundary_refuses_integrable_structure() {
    let dir = TempDir::new().unwrap();
    let o = run("boundary", dir.path(), r#"{"structure": {"kind": "standard"}, "grid": 8}"#, "b", &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn boundary_rejects_coarse_local_lattice() {
    let dir = TempDir::new().unwrap();
    let o = run(
        "boundary",
        dir.path(),
        r#"{"structure": {"kind": "twisted"}, "grid": 8, "R_list": [8], "local_resolution": 16}"#,
        "b",
        &[],
    );
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("32"));
}

#[test]
fn solve_recovers_manufactured_potential() {
    let dir = TempDir::new().unwrap();
    let o = run(
        "solve",
        dir.path(),
        r#"{"structure": {"kind": "twisted"}, "grid": 8, "target": {"manufactured": "0.01*sin(x1)*cos(y1)"}}"#,
        "s",
        &["--threads", "1"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(dir.path().join("s/solve.json"));
    assert_eq!(rep["converged"], true);
    assert!(rep["manufactured_error"].as_f64().unwrap() <= 1e-6);
    for f in ["trace.csv", "path.csv", "phi.gcyf"] {
        assert!(dir.path().join("s").join(f).exists(), "{f} missing");
    }
}

#[test]
fn solve_rejects_non_positive_target_file() {
    let dir = TempDir::new().unwrap();
    let o = run(
        "analyze",
        dir.path(),
        r#"{"structure": {"kind": "standard"}, "grid": 8, "potential": "0.5*sin(x1)"}"#,
        "a",
        &[],
    );
    assert_eq!(code(&o), 0);
    // φ itself changes sign, so as a density it violates positivity
    let target = dir.path().join("a/phi.gcyf");
    let cfg = format!(
        r#"{{"structure": {{"kind": "standard"}}, "grid": 8, "target": {{"file": "{}"}}}}"#,
        target.display()
    );
    let o = run("solve", dir.path(), &cfg, "s", &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
