use std::path::Path;
use std::process::Command;

fn run(dir: &Path, args: &[&str], config: &str) -> (i32, String) {
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_carleman"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .current_dir(dir)
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn dof_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run(dir.path(), &["dof", "--out", "d.csv"], r#"{"J_list": [3, 4], "N_list": [1, 2]}"#);
    assert_eq!(code, 0, "{err}");
    let mut rdr = csv::Reader::from_path(dir.path().join("d.csv")).unwrap();
    assert!(rdr.records().count() >= 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "dof");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["dof"], r#"{"no_such_key": 1}"#).0, 2);
    assert_eq!(run(dir.path(), &["dof"], r#"{"nu": -1}"#).0, 2);
    assert_eq!(run(dir.path(), &["snapshot"], r#"{"T": 0.1, "dt": 0.01, "snapshot_times": [0.015]}"#).0, 2);
}

#[test]
fn tampered_verify_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run(dir.path(), &["verify", "--out", "v.json"], r#"{"tamper": "convection_skew"}"#);
    assert_eq!(code, 1);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}
