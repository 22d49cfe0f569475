use std::fs;
use std::path::Path;
use std::process::Command;

fn kk(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_kk")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const TORUS: &str = r#"{
  "profile": {"tau_min": 0, "tau_max": 1, "a": 2},
  "surface": {"type": "torus", "gamma": {"type": "cos", "c0": 3, "c1": 0.5}}
}"#;

#[test]
fn verify_writes_reports_and_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TORUS);
    let out = tmp.path().join("out");
    let (code, stdout, _) = kk(&["verify", "--config", &cfg, "--out", out.to_str().unwrap(), "--grid", "2,2,4,2"]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("verify: PASS"));
    let reports: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    for r in &reports {
        let grid = r["grid"].as_str().unwrap();
        assert!(grid == "1x2x2x4x2" || grid.ends_with(" random"), "{grid}");
        for key in ["check", "max", "mean", "p99", "tol", "pass", "offenders"] {
            assert!(r.get(key).is_some(), "{key} missing");
        }
    }
    let csv = fs::read_to_string(out.join("profile.csv")).unwrap();
    assert!(csv.starts_with("tau,Q,psi,r,s"));
}

#[test]
fn tol_scale_can_force_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TORUS);
    let out = tmp.path().join("out");
    let (code, stdout, _) = kk(&[
        "flow", "--config", &cfg, "--out", out.to_str().unwrap(), "--grid", "2,2,4,2", "--tol-scale", "1e-12",
    ]);
    assert_eq!(code, 1);
    assert!(stdout.contains("FAIL"));
}

#[test]
fn unknown_key_gives_a_machine_readable_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#"{"profile": {"tau_min": 0, "tau_max": 1, "a": 2, "b": 1}}"#);
    let out = tmp.path().join("out");
    let (code, _, stderr) = kk(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("profile"));
    let err: serde_json::Value = serde_json::from_slice(&fs::read(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["kind"], "config");
    assert!(err["message"].as_str().unwrap().contains("`profile.b`"));
}

#[test]
fn missing_config_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let (code, _, _) = kk(&["construct", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(out.join("error.json").exists());
}

#[test]
fn bad_grid_flag_is_rejected_by_the_parser() {
    let (code, _, stderr) = kk(&["fubini-check", "--grid", "8,8,x,4"]);
    assert_ne!(code, 0);
    assert!(stderr.contains("--grid"));
}

#[test]
fn run_uses_the_command_from_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let text = TORUS.replacen('{', r#"{"command": "construct","#, 1);
    let cfg = config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let (code, _, _) = kk(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--grid", "2,2,3,2"]);
    assert_eq!(code, 0);
    let dump: serde_json::Value = serde_json::from_slice(&fs::read(out.join("construction.json")).unwrap()).unwrap();
    assert_eq!(dump["samples"].as_array().unwrap().len(), 2 * 2 * 3 * 2);
    assert_eq!(dump["chern"]["nearest"], 1);
}

#[test]
fn fubini_extract_reports_gamma_in_the_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#"{"oracle": "fubini"}"#);
    let out = tmp.path().join("out");
    let (code, stdout, _) = kk(&["extract", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1, "{stdout}");
    let reports: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let failing: Vec<&str> = reports
        .iter()
        .filter(|r| r["pass"] == false)
        .map(|r| r["check"].as_str().unwrap())
        .collect();
    assert_eq!(failing, ["extract.gamma_outside_interval"]);
}

#[test]
fn flow_can_dump_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let text = TORUS.replacen('{', r#"{"output": {"trajectories": true},"#, 1);
    let cfg = config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let (code, _, _) = kk(&["flow", "--config", &cfg, "--out", out.to_str().unwrap(), "--grid", "1,2,4,2"]);
    assert_eq!(code, 0);
    let t: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(out.join("trajectories.json")).unwrap()).unwrap();
    assert_eq!(t.len(), 2);
    let taus = t[0]["tau"].as_array().unwrap();
    assert!(taus.windows(2).all(|w| w[0].as_f64() < w[1].as_f64()));
}
