use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn becgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_becgrad")).args(args).output().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

#[test]
fn csv_bytes_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = becgrad(&["run", "--recipe", "fig6", "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let outputs = manifest(&a)["outputs"].as_array().unwrap().clone();
    assert_eq!(outputs.len(), 5);
    for name in outputs {
        let name = name.as_str().unwrap();
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        assert_eq!(x, y, "{name} differs between runs");
        assert!(!x.contains(&b'\r'));
    }
}

#[test]
fn series_csv_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("fig4");
    assert!(becgrad(&["run", "--recipe", "fig4", "--out", dir.to_str().unwrap()]).status.success());
    let text = fs::read_to_string(dir.join("singlet.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,estimator,variance,uncertainty");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0.0");
    assert_eq!(first[3], "inf");
    assert_eq!(text.lines().count(), 1602);
}

#[test]
fn unknown_config_key_is_reported_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "recipe = \"fig4\"\n[params]\nomega_dd = 0.1\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = becgrad(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_error(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("params.omega_dd"));
    assert!(!out_dir.exists());
}

#[test]
fn flag_overrides_land_in_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"params": {"n": 6}}"#).unwrap();
    let dir = tmp.path().join("out");
    let out = becgrad(&[
        "run", "--recipe", "fig4", "--config", cfg.to_str().unwrap(), "--n", "8", "--omega-d", "0.1",
        "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&dir);
    assert_eq!(m["config"]["params"]["n"], 8);
    assert_eq!(m["config"]["params"]["omega_d"], 0.1);
    // The series grid follows the new Omega_D: one full period.
    let t_end = m["config"]["grid"]["t_end"].as_f64().unwrap();
    assert!((t_end - 2.0 * std::f64::consts::PI / 0.1).abs() < 1e-9);
    assert_eq!(m["recipe"], "fig4");
}

#[test]
fn failed_write_leaves_no_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    // A directory where the manifest should go makes the final write fail.
    fs::create_dir_all(dir.join("manifest.json")).unwrap();
    let out = becgrad(&["run", "--recipe", "fig4", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error(&out)["error"]["kind"], "io");
    let left: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left, vec![std::ffi::OsString::from("manifest.json")]);
}

#[test]
fn invalid_values_exit_with_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = becgrad(&["run", "--recipe", "fig4", "--n", "5", "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_error(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("params.n"));

    let out = becgrad(&["run", "--recipe", "fig42"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error(&out)["error"]["kind"], "config");
}

#[test]
fn verify_flag_records_oracle_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("v");
    let out = becgrad(&["run", "--recipe", "fig6", "--verify", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let checks = manifest(&dir)["verification"].as_array().unwrap().clone();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn synth_writes_loadable_state() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("state.json");
    let out = becgrad(&["synth", "--n", "4", "--u-over-ej", "10", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["fidelity_max"].as_f64().unwrap() > 0.9);
    let state: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(state["modes"], serde_json::json!(["e_L", "g_L", "e_R", "g_R"]));
}

#[test]
fn list_recipes_names_every_figure() {
    let out = becgrad(&["list-recipes"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for k in 2..=11 {
        assert!(text.lines().any(|l| l.starts_with(&format!("fig{k} "))), "fig{k} missing");
    }
}
