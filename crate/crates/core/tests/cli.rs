use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hlfd::harness::{read_dataset, read_model, test_path, train_path, CSV_HEADER};

const CONFIG: &str = r#"{
    "seed": 5,
    "dataset": {"seed": 1, "budgets": [3, 9]},
    "methods": ["nn", "bnn", "oracle_stub", "uniform_stub"],
    "train": {"epochs": 2, "hidden": [8]},
    "test": {"seed": 2, "episodes": 6}
}"#;

fn hlfd(args: &[&str], dir: &Path, seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hlfd"));
    c.args(args).current_dir(dir).env_remove("HLFD_SEED");
    if let Some(s) = seed {
        c.env("HLFD_SEED", s);
    }
    c.output().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    dir
}

#[test]
fn generate_train_evaluate_round() {
    let dir = setup();
    let d = dir.path();
    let out = hlfd(&["generate", "--config", "cfg.json", "--out", "run"], d, None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("budget 9"));
    let train = read_dataset(&train_path(&d.join("run"), 9), false).unwrap();
    assert!(train.iter().all(|x| x.hidden_policy().is_none()));
    assert!(read_dataset(&test_path(&d.join("run")), true).unwrap()[0].hidden_policy().is_some());

    for m in ["nn", "bnn", "oracle_stub", "uniform_stub"] {
        for b in ["3", "9"] {
            let out = hlfd(&["train", "--config", "cfg.json", "--out", "run", "--method", m, "--budget", b], d, None);
            assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        }
    }
    let model = read_model(&d.join("run/models/bnn-b9.json")).unwrap();
    assert_eq!(model.budget, 9);

    let out = hlfd(&["evaluate", "--config", "cfg.json", "--out", "run"], d, None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    let oracle = rows.iter().find(|r| r[0] == "oracle_stub").unwrap();
    assert_eq!(oracle[2], "1.000000");
    for r in &rows {
        let top1: f64 = r[2].parse().unwrap();
        let top3: f64 = r[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&top1) && top1 <= top3 + 1e-12);
        assert!(r[3].parse::<f64>().unwrap() >= 0.0);
        assert_eq!(r[6], "6");
    }
    assert!(fs::read_to_string(d.join("run/traces.jsonl")).unwrap().lines().count() == 48);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(hlfd(&["bogus"], d, None).status.code(), Some(1));
    assert_eq!(hlfd(&["sweep", "--config", "cfg.json"], d, None).status.code(), Some(1));
    assert_eq!(
        hlfd(&["train", "--config", "cfg.json", "--out", "o", "--method", "magic", "--budget", "3"], d, None).status.code(),
        Some(1)
    );
    assert_eq!(hlfd(&["sweep", "--config", "missing.json", "--out", "o"], d, None).status.code(), Some(1));
    fs::write(d.join("bad.json"), r#"{"dataset": {"seed": 1}, "methods": ["nn"], "test": {"seed": 1}}"#).unwrap();
    let out = hlfd(&["sweep", "--config", "bad.json", "--out", "o"], d, None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test.seed"));
    assert_eq!(hlfd(&["sweep", "--config", "cfg.json", "--out", "o"], d, Some("abc")).status.code(), Some(1));
    assert_eq!(hlfd(&["--help"], d, None).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = setup();
    let d = dir.path();
    let out = hlfd(&["train", "--config", "cfg.json", "--out", "empty", "--method", "nn", "--budget", "3"], d, None);
    assert_eq!(out.status.code(), Some(2));
    hlfd(&["generate", "--config", "cfg.json", "--out", "run"], d, None);
    fs::write(d.join("run/data/train-b3.jsonl"), "{not json}\n").unwrap();
    let out = hlfd(&["train", "--config", "cfg.json", "--out", "run", "--method", "nn", "--budget", "3"], d, None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_override_changes_the_config_hash_only_through_the_seed() {
    let dir = setup();
    let d = dir.path();
    for (name, seed) in [("a", None), ("b", Some("5")), ("c", Some("6"))] {
        let out = hlfd(&["sweep", "--config", "cfg.json", "--out", name, "--jobs", "2"], d, seed);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let meta = |n: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(d.join(n).join("metadata.json")).unwrap()).unwrap()
    };
    assert_eq!(meta("a")["config_hash"], meta("b")["config_hash"]);
    assert_ne!(meta("a")["config_hash"], meta("c")["config_hash"]);
    assert_eq!(fs::read(d.join("a/metrics.csv")).unwrap(), fs::read(d.join("b/metrics.csv")).unwrap());
    // a second sweep over the same directory reuses every model
    let before = fs::read_to_string(d.join("a/run_log.jsonl")).unwrap();
    hlfd(&["sweep", "--config", "cfg.json", "--out", "a"], d, None);
    assert_eq!(fs::read_to_string(d.join("a/run_log.jsonl")).unwrap(), before);
}
