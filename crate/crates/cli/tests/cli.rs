use std::path::Path;
use std::process::{Command, Output};

fn bbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbm")).args(args).env_remove("BBM_LAB_CACHE").output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn scaling_succeeds_with_csv_on_stdout() {
    let out = bbm(&["scaling", "--dim", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "R,exterior_rescaled,exterior,exterior_rel,moment_rescaled,moment,moment_rel");
    assert_eq!(lines.count(), 4);
}

#[test]
fn rejected_configuration_exits_with_two() {
    assert_eq!(bbm(&["converge", "--family", "nonexistent"]).status.code(), Some(2));
    assert_eq!(bbm(&["converge", "--eps-seq", "0.1,0.2"]).status.code(), Some(2));
    assert_eq!(bbm(&["probe-nu", "--family", "all"]).status.code(), Some(2));
}

#[test]
fn missed_tolerance_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("annulus.csv");
    let status = bbm(&[
        "converge",
        "--family",
        "annulus_bump",
        "--eps-seq",
        "0.5,0.25,0.125",
        "--tol",
        "1e-30",
        "--out",
        out.to_str().unwrap(),
    ])
    .status;
    assert_eq!(status.code(), Some(1));
    assert!(out.exists());
    let manifest = json(&dir.path().join("annulus.csv.failures.json"));
    assert_eq!(manifest["experiment"], "converge");
    assert_eq!(manifest["failures"][0]["scope"], "tolerance");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"family": "fractional", "dim": 2, "eps_seq": [0.5, 0.1], "delta": 0.3, "scheme": {"n_theta": 16}}"#)
        .unwrap();
    let out = dir.path().join("mu.json");
    let status = bbm(&[
        "sphere-measure",
        "--config",
        cfg.to_str().unwrap(),
        "--family",
        "gaussian",
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
    ])
    .status;
    assert!(status.success());
    let report = json(&out);
    assert_eq!(report["family"], "gaussian");
    assert_eq!(report["dim"], 2);
    let measures = report["measures"].as_array().unwrap();
    assert_eq!(measures.len(), 2);
    assert_eq!(measures[0]["delta"], 0.3);
    assert_eq!(measures[0]["measure"]["weights"].as_array().unwrap().len(), 16);
}

#[test]
fn cached_runs_reproduce_fresh_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let run = |with_cache: bool| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_bbm"));
        cmd.args(["parseval", "--family", "fractional", "--eps-seq", "0.5,0.1"]);
        if with_cache {
            cmd.env("BBM_LAB_CACHE", &cache);
        } else {
            cmd.env_remove("BBM_LAB_CACHE");
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        out.stdout
    };
    let fresh = run(false);
    assert_eq!(run(true), fresh);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 4);
    assert_eq!(run(true), fresh);
}

#[test]
fn conditions_report_the_verdict_matrix() {
    let out = bbm(&["conditions", "--family", "constant1", "--format", "json"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let row = &report["matrix"]["constant1"];
    assert_eq!(row["i"], "fail");
    assert_eq!(row["levy"], "pass");
    assert_eq!(row["levy2"], "pass");
}
