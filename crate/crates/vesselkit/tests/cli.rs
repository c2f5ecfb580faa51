//! End-to-end runs of the `vesselkit` binary: exit codes, output files and
//! determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use vesselkit_core::spectrum::{save_measure, SpectralMeasure};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vesselkit")).current_dir(dir).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited normally")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes a config for `q = 1` at order 4 and returns its path.
fn constant_potential_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, r#"{"order": 4, "coefficients": [1, 0, 0, 0, 0, 0, 0, 0, 0, 0]}"#).unwrap();
    path
}

const SMALL_GRID: &str = "--grid=-1,1,21,-0.1,0.1,9";

#[test]
fn realize_constant_potential_triples() {
    let dir = TempDir::new().unwrap();
    let cfg = constant_potential_config(dir.path());
    let out = run(dir.path(), &["realize", "-c", cfg.to_str().unwrap(), "--out-dir", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(dir.path().join("o/realize_report.json"));
    assert_eq!(rep["moment_window"], 4);
    let t0 = &rep["triples"][0];
    assert_eq!((t0["r"].as_f64(), t0["b"].as_f64(), t0["d"].as_f64()), (Some(0.0), Some(-0.25), Some(0.0)));
    assert!(rep["moment_residuals"].as_array().unwrap().iter().all(|r| r.as_f64().unwrap() <= 1e-8));
    assert!(dir.path().join("o/measure.json").exists());
}

#[test]
fn realize_rejects_missing_or_short_coefficients() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["realize", "--order", "4"])), 2);
    std::fs::write(dir.path().join("short.json"), r#"{"order": 8, "coefficients": [1.0]}"#).unwrap();
    assert_eq!(code(&run(dir.path(), &["realize", "-c", "short.json"])), 2);
    std::fs::write(dir.path().join("typo.json"), r#"{"ordr": 8}"#).unwrap();
    assert_eq!(code(&run(dir.path(), &["realize", "-c", "typo.json"])), 2);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = constant_potential_config(dir.path());
    std::fs::write(dir.path().join("blocker"), "").unwrap();
    let out = run(dir.path(), &["realize", "-c", cfg.to_str().unwrap(), "--out-dir", "blocker/o"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn evolve_input_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["evolve", "missing.json"])), 3);
    std::fs::write(dir.path().join("bad.json"), r#"{"schema": "something-else", "atoms": []}"#).unwrap();
    assert_eq!(code(&run(dir.path(), &["evolve", "bad.json"])), 2);
}

#[test]
fn soliton_unknown_name() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["soliton", "three-atom"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("three-atom"));
}

#[test]
fn empty_measure_evolves_to_zero_field() {
    let dir = TempDir::new().unwrap();
    save_measure(&SpectralMeasure::empty(), &dir.path().join("empty.json")).unwrap();
    let out = run(dir.path(), &["evolve", "empty.json", SMALL_GRID, "--out-dir", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("o/field.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 21 * 9);
    for row in rows {
        let f: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!((f[2], f[3], f[4], f[5], f[6]), (1.0, 0.0, 0.0, 0.0, 1.0), "{row}");
    }
    let rep = json(dir.path().join("o/evolve_report.json"));
    assert_eq!(rep["omega"]["fraction"], 1.0);
    assert_eq!(rep["kdv_residual"]["max"], 0.0);
}

#[test]
fn empty_omega_exits_4_after_writing_outputs() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["soliton", "one-atom", SMALL_GRID, "--tol-tau-floor", "1e6", "--out-dir", "o"]);
    assert_eq!(code(&out), 4);
    assert!(dir.path().join("o/field.csv").exists());
    let rep = json(dir.path().join("o/evolve_report.json"));
    assert_eq!(rep["omega"]["points"], 0);
}

#[test]
fn coarse_grid_gives_null_residual() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["soliton", "one-atom", "--grid=-1,1,11,-0.1,0.1,3", "--out-dir", "o"]);
    assert_eq!(code(&out), 0);
    let rep = json(dir.path().join("o/evolve_report.json"));
    assert!(rep["kdv_residual"].is_null());
    assert!(rep["warnings"][0].as_str().unwrap().contains("GridTooCoarse"));
}

#[test]
fn soliton_outputs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    for o in ["a", "b"] {
        assert_eq!(code(&run(dir.path(), &["soliton", "two-atom", SMALL_GRID, "--out-dir", o])), 0);
    }
    for f in ["field.csv", "evolve_report.json", "measure.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn realize_evolve_verify_through_files() {
    let dir = TempDir::new().unwrap();
    let cfg = constant_potential_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&run(dir.path(), &["realize", "-c", cfg, "--out-dir", "o"])), 0);
    assert_eq!(code(&run(dir.path(), &["evolve", "o/measure.json", "-c", cfg, SMALL_GRID, "--out-dir", "o"])), 0);
    let out = run(dir.path(), &["verify", "o/measure.json", "-c", cfg, "--out-dir", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let rep = json(dir.path().join("o/verify_report.json"));
    assert_eq!(rep["pass"], true);
    let names: Vec<&str> = rep["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"moment_roundtrip") && names.contains(&"kdv_residual"));
}

#[test]
fn verify_flags_a_corrupted_measure() {
    let dir = TempDir::new().unwrap();
    let cfg = constant_potential_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&run(dir.path(), &["realize", "-c", cfg, "--out-dir", "o"])), 0);
    let path = dir.path().join("o/measure.json");
    let mut meas = json(&path);
    let w = meas["atoms"][0]["w12"].as_f64().unwrap();
    meas["atoms"][0]["w12"] = Value::from(w + 0.1);
    std::fs::write(&path, serde_json::to_string_pretty(&meas).unwrap()).unwrap();
    let out = run(dir.path(), &["verify", "o/measure.json", "-c", cfg, "--out-dir", "o"]);
    assert_eq!(code(&out), 1);
    let rep = json(dir.path().join("o/verify_report.json"));
    let check = rep["checks"].as_array().unwrap().iter().find(|c| c["name"] == "moment_roundtrip").unwrap();
    assert_eq!(check["pass"], false);
}

#[test]
fn bundled_measure_verifies() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["soliton", "one-atom", SMALL_GRID, "--out-dir", "o"])), 0);
    let out = run(dir.path(), &["verify", "o/measure.json", "--out-dir", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let rep = json(dir.path().join("o/verify_report.json"));
    assert!(rep["orders"]["kdv"].as_f64().unwrap() >= 2.0);
}

#[test]
fn flags_override_config() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"order": 4, "coefficients": [0, 1]}"#).unwrap();
    let out = run(dir.path(), &["roundtrip", "-c", "c.json", "--order", "6", "--out-dir", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(dir.path().join("o/roundtrip_report.json"));
    assert_eq!(rep["order"], 6);
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["coefficients"].as_array().unwrap().len(), 5);
}
