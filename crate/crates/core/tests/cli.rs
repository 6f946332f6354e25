use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use mlsd::cli::{cmd_run, cmd_validate, load_report, smoke_sizes, write_synthetic_experiment, Stage, StageSelector};

fn fixture() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let (sizes, settings) = smoke_sizes();
    let config = write_synthetic_experiment(dir.path(), sizes, &settings, 3).unwrap();
    (dir, config)
}

fn edit_config(path: &Path, f: impl FnOnce(&mut Value)) {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    f(&mut v);
    fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn mlsd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlsd"))
        .args(args)
        .env_remove("MLSD_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn codes(config: &Path) -> Vec<String> {
    cmd_validate(config).into_iter().map(|d| d.code).collect()
}

#[test]
fn validate_accepts_the_smoke_fixture() {
    let (_dir, config) = fixture();
    let out = mlsd(&["validate", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ok"], true);
    assert_eq!(v["diagnostics"].as_array().unwrap().len(), 0);
}

#[test]
fn noise_equal_to_source_is_rejected() {
    let (_dir, config) = fixture();
    edit_config(&config, |v| {
        v["data"]["noise"] = v["data"]["source"].clone();
    });
    assert!(codes(&config).contains(&"NOISE_EQ_SOURCE".to_string()));
    let out = mlsd(&["validate", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("NOISE_EQ_SOURCE"));
}

#[test]
fn mixed_label_schemes_are_rejected() {
    let (dir, config) = fixture();
    let raw = fs::read_to_string(dir.path().join("destination.csv")).unwrap();
    let four_way = raw
        .replace(",FAVOR,", ",SUPPORT,")
        .replace(",AGAINST,", ",REFUTE,")
        .replace(",NEITHER,", ",COMMENT,");
    fs::write(dir.path().join("destination.csv"), four_way).unwrap();
    assert!(codes(&config).contains(&"SCHEME_MISMATCH".to_string()), "{:?}", codes(&config));
}

#[test]
fn config_errors_have_codes() {
    let (dir, config) = fixture();
    edit_config(&config, |v| v["surprise"] = Value::Bool(true));
    assert_eq!(codes(&config), vec!["CONFIG_INVALID"]);

    let (_d2, config) = fixture();
    edit_config(&config, |v| v["data"]["source"]["files"][0]["path"] = "nope.csv".into());
    assert!(codes(&config).contains(&"PATH_NOT_FOUND".to_string()));

    let (_d3, config) = fixture();
    edit_config(&config, |v| v["data"]["destination"]["targets"] = serde_json::json!(["ELSEWHERE"]));
    assert!(codes(&config).contains(&"TARGET_NOT_FOUND".to_string()));

    assert_eq!(codes(&dir.path().join("absent.json")), vec!["CONFIG_UNREADABLE"]);
}

#[test]
fn stage_without_upstream_reports_missing() {
    let (_dir, config) = fixture();
    let c = config.to_str().unwrap();
    assert_eq!(mlsd(&["run", c, "--stage", "mine"]).status.code(), Some(0));
    let out = mlsd(&["run", c, "--stage", "select"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MISSING_CHECKPOINT"));
}

#[test]
fn rerun_is_cached_and_changed_settings_are_stale() {
    let (dir, config) = fixture();
    let first = cmd_run(&config, StageSelector::All, None).unwrap();
    assert_eq!(first.len(), 4);
    assert!(first.iter().all(|o| !o.cached));
    let second = cmd_run(&config, StageSelector::All, None).unwrap();
    assert!(second.iter().all(|o| o.cached));

    edit_config(&config, |v| v["metric"]["margin"] = 0.5.into());
    let err = cmd_run(&config, StageSelector::One(Stage::Select), None).unwrap_err();
    assert_eq!(err.code(), "STALE_ARTIFACT");
    assert_eq!(err.exit_code(), 3);
    let out = mlsd(&["run", config.to_str().unwrap(), "--stage", "select"]);
    assert_eq!(out.status.code(), Some(3));

    // `all` recomputes from the first changed stage on.
    let third = cmd_run(&config, StageSelector::All, None).unwrap();
    let cached: Vec<bool> = third.iter().map(|o| o.cached).collect();
    assert_eq!(cached, vec![true, false, false, false]);
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn tampered_artifact_is_stale() {
    let (dir, config) = fixture();
    cmd_run(&config, StageSelector::All, None).unwrap();
    let triplets = dir.path().join("out/triplets.csv");
    let mut raw = fs::read_to_string(&triplets).unwrap();
    raw.push_str("0,1,2\n");
    fs::write(&triplets, raw).unwrap();
    let err = cmd_run(&config, StageSelector::One(Stage::TrainMetric), None).unwrap_err();
    assert_eq!(err.code(), "STALE_ARTIFACT");
}

#[test]
fn output_root_and_report() {
    let (_dir, config) = fixture();
    let root = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mlsd"))
        .args(["run", config.to_str().unwrap()])
        .env("MLSD_OUTPUT_ROOT", root.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.path().join("out/report.json").exists());

    let report = load_report(&config, Some(root.path())).unwrap();
    assert_eq!(report.seeds, vec![13, 42]);
    assert_eq!(report.shots, vec![2, 4]);
    assert!(report.significance.is_some());

    let text = Command::new(env!("CARGO_BIN_EXE_mlsd"))
        .args(["report", config.to_str().unwrap()])
        .env("MLSD_OUTPUT_ROOT", root.path())
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&text.stdout).contains("MLSD vs Random"));

    // Without the root the report is not where the config points.
    let missing = load_report(&config, None).unwrap_err();
    assert_eq!(missing.code(), "MISSING_REPORT");
}
