use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sgdmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdmc"))
        .args(args)
        .env_remove("SGDMC_REMOTE_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn error_record(out: &Output) -> Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {line}"))
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL_SCALING: &str = r#"
kind = "scaling-laws"
seed = 3

[scaling]
gaps = [0.5]
lengths = [10, 20, 40]
trials = 5
mixing_steps = 50
"#;

const SMALL_FORECAST: &str = r#"
kind = "convex-forecast"
seed = 1

[sgd]
steps = 200

[forecast]
steps = 150
window = 50
runs = 2
"#;

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_owned()
}

fn assert_same_tree(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        let x = fs::read(a.join(&name)).unwrap();
        let y = fs::read(b.join(&name)).unwrap_or_else(|_| panic!("{name:?} missing in second run"));
        assert!(x == y, "{name:?} differs between runs");
    }
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"scaling-laws\"\nstep_size = 0.1\n");
    let rec = error_record(&sgdmc(&["scaling", "--config", &cfg]));
    assert_eq!(rec["error"], "Config");
    assert!(rec["message"].as_str().unwrap().contains("step_size"));
}

#[test]
fn missing_config_file_is_reported() {
    let rec = error_record(&sgdmc(&["forecast", "--config", "/definitely/not/here.toml"]));
    assert_eq!(rec["error"], "Config");
}

#[test]
fn bad_flag_value_is_a_usage_error() {
    let rec = error_record(&sgdmc(&["scaling", "--provider", "gpt"]));
    assert_eq!(rec["error"], "Usage");
}

#[test]
fn kind_must_match_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SCALING);
    let rec = error_record(&sgdmc(&["forecast", "--config", &cfg]));
    assert_eq!(rec["error"], "Config");
}

#[test]
fn remote_without_endpoint_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SCALING);
    let out = dir.path().join("out");
    let rec = error_record(&sgdmc(&["scaling", "--config", &cfg, "--provider", "remote", "--out", out.to_str().unwrap()]));
    assert_eq!(rec["error"], "Config");
}

#[test]
fn help_exits_zero() {
    let out = sgdmc(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["simulate", "estimate", "forecast", "regime-probe", "scaling"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn scaling_tables_carry_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SCALING);
    let out = dir.path().join("out");
    let res = sgdmc(&["scaling", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let record: Value = serde_json::from_slice(&res.stdout).unwrap();
    let hash = record["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    for table in ["scaling.csv", "mixing.csv"] {
        assert_eq!(first_line(&out.join(table)), format!("# config_hash: {hash}"));
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"], hash);
    let rows = fs::read_to_string(out.join("scaling.csv")).unwrap();
    assert_eq!(rows.lines().nth(1).unwrap(), "chain,rho,t,kl,tv,trials");
    assert_eq!(rows.lines().count(), 2 + 3);
}

#[test]
fn seed_flag_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SCALING);
    let hash = |seed: &str| {
        let out = dir.path().join(seed);
        let res = sgdmc(&["scaling", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(res.status.success());
        let v: Value = serde_json::from_slice(&res.stdout).unwrap();
        v["config_hash"].as_str().unwrap().to_owned()
    };
    assert_ne!(hash("1"), hash("2"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SCALING);
    let fc = dir.path().join("forecast.toml");
    fs::write(&fc, SMALL_FORECAST).unwrap();
    let fc = fc.to_str().unwrap();
    for (sub, cfg) in [("scaling", cfg.as_str()), ("simulate", fc), ("estimate", fc), ("forecast", fc)] {
        let a = dir.path().join(format!("{sub}_a"));
        let b = dir.path().join(format!("{sub}_b"));
        for out in [&a, &b] {
            let res = sgdmc(&[sub, "--config", cfg, "--out", out.to_str().unwrap()]);
            assert!(res.status.success(), "{sub}: {}", String::from_utf8_lossy(&res.stderr));
        }
        assert_same_tree(&a, &b);
    }
}

#[test]
fn forecast_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_FORECAST);
    let out = dir.path().join("out");
    let res = sgdmc(&["forecast", "--config", &cfg, "--provider", "oracle", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["train_0.csv", "forecast_0.csv", "forecast_1.csv", "block_1.csv", "block_2.csv", "kernel.bin", "summary.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["provider"], "oracle");
}
