use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_diffusion-forge"));
    c.env_remove("DIFFUSION_FORGE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn classify_planar_bessel() {
    let out = run(&["classify", "--fixture", "bessel(2)"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["result"]["recurrent"], true);
    assert_eq!(v["result"]["conservative"], true);
    assert_eq!(v["seed"], 42);
}

#[test]
fn verify_hitting_passes() {
    let out = run(&["verify", "hitting", "--n", "100000", "--seed", "42"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let mc = &v["result"]["checks"][0]["details"]["mc"];
    let (est, se) = (mc["estimate"].as_f64().unwrap(), mc["stderr"].as_f64().unwrap());
    assert!((est - 2.0 / 3.0).abs() <= 3.0 * se);
    assert!(String::from_utf8_lossy(&out.stderr).contains("criterion 1 hitting: PASS"));
}

#[test]
fn extend_drifted_example() {
    let out = run(&["extend", "--fixture", "example2(gamma=1)"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["result"]["extension"]["case"], "regular-origin");
    assert_eq!(v["result"]["extension"]["unique"], true);
    assert_eq!(v["result"]["invariants"]["passed"], true);
}

#[test]
fn check_subspace_defaults_to_thinned_pair() {
    let out = run(&["check-subspace", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("is_subspace,c,proper,equivalent_representation"));
    assert_eq!(lines.next(), Some("true,1,true,false"));
}

#[test]
fn config_errors_exit_two() {
    assert_eq!(run(&["classify", "--fixture", "nope(1)"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "no-such-check"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--x0", "-1"]).status.code(), Some(2));
    let dir = scratch("bad_config");
    let cfg = dir.join("job.json");
    std::fs::write(&cfg, "{\n  \"n\": 10,\n  \"bogus\": 1\n}\n").unwrap();
    let out = run(&["classify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("line 3"), "{err}");
}

#[test]
fn flags_override_file_and_file_overrides_env() {
    let dir = scratch("precedence");
    let cfg = dir.join("job.json");
    std::fs::write(&cfg, r#"{"seed": 7, "h": 0.05, "horizon": 0.01, "fixture": "bessel(3)"}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    let seed_of = |out: Output| json(&out)["seed"].as_u64().unwrap();
    assert_eq!(seed_of(run(&["simulate", "--config", cfg])), 7);
    assert_eq!(seed_of(run(&["simulate", "--config", cfg, "--seed", "9"])), 9);
    let env = bin().args(["simulate", "--config", cfg]).env("DIFFUSION_FORGE_SEED", "11").output().unwrap();
    assert_eq!(seed_of(env), 7);
    let env = bin().args(["simulate", "--h", "0.05", "--horizon", "0.01"]).env("DIFFUSION_FORGE_SEED", "11").output().unwrap();
    assert_eq!(seed_of(env), 11);
    let v = json(&run(&["simulate", "--config", cfg, "--h", "0.1"]));
    assert_eq!(v["result"]["walk"]["step_h"], 0.1);
    assert_eq!(v["config"]["horizon"], 0.01);
}

#[test]
fn runs_are_reproducible() {
    let (a, b) = (scratch("repro_a"), scratch("repro_b"));
    for dir in [&a, &b] {
        let out = run(&["skew-simulate", "--fixture", "brownian-skew(2)", "--horizon", "0.05", "--h", "0.05", "--seed", "5", "--out", dir.to_str().unwrap(), "--format", "csv"]);
        assert_eq!(out.status.code(), Some(0));
    }
    let read = |d: &PathBuf| std::fs::read(d.join("skew-simulate.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let text = String::from_utf8(read(&a)).unwrap();
    assert_eq!(text.lines().next(), Some("t,x0,x1,x2,A"));
    let meta: Value = serde_json::from_slice(&std::fs::read(a.join("skew-simulate.config.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 5);
}
