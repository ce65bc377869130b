use std::path::PathBuf;
use std::process::{Command, Output};

fn lumpsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lumpsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("lumpsim-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn verify_dynamic_writes_a_report() {
    let out = scratch("dyn");
    let o = lumpsim(&["verify-dynamic", "--trials", "100", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["trials"], 100);
    assert_eq!(v["seed"], 7);
    assert!(v["rmse"].as_array().unwrap().iter().all(|r| r.as_f64().unwrap() < 0.01));
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn csv_reports_on_request() {
    let out = scratch("csv");
    let o = lumpsim(&["verify-static", "--trials", "4", "--format", "csv", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.csv").exists());
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn missing_model_exits_with_one() {
    let o = lumpsim(&["verify-static", "--model", "/nonexistent/leg.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn invalid_model_exits_with_one() {
    let dir = scratch("badmodel");
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("bad.toml");
    std::fs::write(&p, "links = 3\n").unwrap();
    let o = lumpsim(&["equivalize", "--model", p.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(lumpsim(&["verify-dynamic", "--trials", "many"]).status.code(), Some(1));
    assert_eq!(lumpsim(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(lumpsim(&["simulate", "--mode", "sideways"]).status.code(), Some(1));
    assert!(lumpsim(&["--help"]).status.success());
}

#[test]
fn export_mjcf_writes_parseable_xml() {
    let dir = scratch("mjcf");
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("leg.xml");
    let o = lumpsim(&["export-mjcf", "--out", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let xml = std::fs::read_to_string(&p).unwrap();
    assert!(xml.contains("<mujoco"));
    assert!(xml.contains("muscleMAA_mSlideJoint"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn simulate_and_equivalize_produce_files() {
    let out = scratch("sim");
    let o = lumpsim(&["simulate", "--t-end", "0.5", "--out", out.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let entries: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(entries.iter().any(|n| n == "engine.json"), "{entries:?}");
    let o = lumpsim(&["equivalize", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(out.join("assemblies.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v[0]["segment_stiffness_n_per_m"], 735.6);
    std::fs::remove_dir_all(&out).unwrap();
}
