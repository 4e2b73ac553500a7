use std::fs;
use std::path::Path;
use std::process::Command;

fn sgdgap() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sgdgap"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

const LINEAR: &str = r#"{
    "model": {"kind": "linear_quadratic"},
    "generator": {"d": 2, "noise_std": 0.5},
    "learning_rate": 0.01, "n_train": 20, "n_test": 20,
    "ensemble_size": 400, "seed": 3, "steps": 5,
    "cov_scaling": {"size_a": 2, "size_b": 2, "overlaps": [0, 1], "trials": 2000}
}"#;

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = sgdgap().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = sgdgap().arg("verify-gap").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let out = sgdgap()
        .args(["verify-gap", "--config"])
        .arg(tmp.path().join("absent.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"model": {"kind": "linear_quadratic"}, "bogus": 1}"#);
    let out = sgdgap().arg("verify-main").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(
        tmp.path(),
        &LINEAR.replace("\"learning_rate\": 0.01", "\"learning_rate\": -1.0"),
    );
    let out = sgdgap().arg("verify-main").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    assert_eq!(sgdgap().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(sgdgap().arg("--version").output().unwrap().status.code(), Some(0));
}

#[test]
fn verify_gap_passes_and_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), LINEAR);
    let out_dir = tmp.path().join("gap");
    let out = sgdgap()
        .arg("verify-gap")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out_dir);
    assert_eq!(s["verdict"], "pass");
    assert_eq!(s["seed"], 3);
    assert_eq!(s["reports"][0]["name"], "delta_gap");
    assert_eq!(s["config"]["theta"], serde_json::json!([2.0, 0.0]));
    let csv = fs::read_to_string(out_dir.join("verify_gap.csv")).unwrap();
    assert_eq!(csv.lines().count(), 401);
    assert!(csv.starts_with("realization,delta_gap,train_test_divergence"));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), LINEAR);
    let out_dir = tmp.path().join("main");
    let out = sgdgap()
        .args(["verify-main", "--seed", "99", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    assert_eq!(summary(&out_dir)["seed"], 99);
}

#[test]
fn every_subcommand_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), LINEAR);
    for (cmd, csv) in [
        ("verify-cov-scaling", "cov_scaling.csv"),
        ("verify-taylor", "verify_taylor.csv"),
        ("train", "train.csv"),
        ("stats", "stats.csv"),
    ] {
        let dir = tmp.path().join(cmd);
        let out = sgdgap()
            .arg(cmd)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&dir)
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(dir.join(csv).exists(), "{cmd}");
        assert_eq!(summary(&dir)["command"], cmd);
    }
}

#[test]
fn stats_reads_a_dataset_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), LINEAR);
    let data = tmp.path().join("data.csv");
    fs::write(&data, "x_1,x_2,y\n1,0,1\n0,1,0\n1,1,2\n").unwrap();
    let dir = tmp.path().join("stats");
    let out = sgdgap()
        .arg("stats")
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .args(["--k", "1", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(&dir)["details"]["sample_count"], 3);

    fs::write(&data, "x_1,x_2,y\n1,0,1\n0,1\n").unwrap();
    let out = sgdgap()
        .arg("stats")
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn failing_verification_exits_one() {
    // a z threshold of zero cannot be met by a noisy estimate
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &LINEAR.replace("\"seed\": 3", "\"seed\": 3, \"z_threshold\": 1e-9"),
    );
    let dir = tmp.path().join("fail");
    let out = sgdgap()
        .arg("verify-main")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(summary(&dir)["verdict"], "fail");
}
