use std::path::Path;
use std::process::{Command, Output};

fn smallnoise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smallnoise")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path, threshold: f64) -> String {
    let path = dir.join("lf.toml");
    let text = format!(
        "epsilons = [0.1, 0.05]\nn_paths = 400\ndt = 0.001\nreference_size = 20000\nbootstrap = 10\n\n\
         [model]\nname = \"logistic_feller\"\n\n\
         [thresholds.w1_final]\nvalue = {threshold}\nprovenance = \"calibrated\"\n"
    );
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn unknown_subcommand_is_an_error_with_usage() {
    let out = smallnoise(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_exits_zero() {
    assert_eq!(smallnoise(&["--help"]).status.code(), Some(0));
}

#[test]
fn classify_logistic_ends() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().display().to_string();
    let out = smallnoise(&["--out-dir", &out_dir, "classify", "--model", "logistic_feller", "--epsilon", "0.1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["left"]["class"], "exit");
    assert_eq!(v["left"]["attracting"], true);
    assert_eq!(v["right"]["class"], "entrance");
    assert_eq!(v["right"]["attracting"], false);
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn verify_is_reproducible_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1.0);
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub).display().to_string();
        let out = smallnoise(&["--config", &cfg, "--seed", "7", "--out-dir", &out_dir, "verify", "main-theorem"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.path().join(sub).join("report.json")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
    let laws = std::fs::read_to_string(dir.path().join("a/laws/quantiles.csv")).unwrap();
    assert!(laws.starts_with("# meta: "));
    assert!(dir.path().join("a/timing.json").exists());
    let report = dir.path().join("a/report.json").display().to_string();
    assert_eq!(smallnoise(&["report", &report]).status.code(), Some(0));
}

#[test]
fn failed_verdict_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1e-9);
    let out_dir = dir.path().join("out").display().to_string();
    let out = smallnoise(&["--config", &cfg, "--out-dir", &out_dir, "verify", "main-theorem"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn flow_tables_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let csv_dir = dir.path().join("csv").display().to_string();
    let out = smallnoise(&["--out-dir", &csv_dir, "flow", "--y-max", "5", "--grid", "101"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("csv/rescaled_flow.csv")).unwrap();
    assert!(csv.starts_with("# meta: "));
    let json_dir = dir.path().join("json").display().to_string();
    let out = smallnoise(&["--out-dir", &json_dir, "--format", "json", "flow", "--y-max", "5", "--grid", "101"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("json/rescaled_flow.json")).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 101);
}

#[test]
fn branching_and_limit_law_run() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().display().to_string();
    let out = smallnoise(&[
        "--out-dir",
        &out_dir,
        "branching",
        "--kind",
        "csb",
        "--family",
        "feller",
        "--transform",
        "kappa",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("transform_kappa.csv").exists());
    let out = smallnoise(&["--out-dir", &out_dir, "--seed", "3", "limit-law", "--n", "20000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("laws/w_samples.csv").exists());
}

#[test]
fn unknown_experiment_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().display().to_string();
    assert_eq!(smallnoise(&["--out-dir", &out_dir, "verify", "nonsense"]).status.code(), Some(1));
}
