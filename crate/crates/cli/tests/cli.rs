use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_rebasin-kit");

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn summary(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

fn column(dir: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(dir.join("trials.csv")).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn find_ot_recovers_a_single_plan() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = config("find_ot.json");
    ok(&["find_ot", "--config", cfg.to_str().unwrap(), "--runs", "1", "--out", out]);
    assert_eq!(column(dir.path(), "l1"), vec![0.0]);
    assert_eq!(column(dir.path(), "exact"), vec![1.0]);
    assert!(dir.path().join("plan_0.json").exists());
}

#[test]
fn aggregates_match_the_trial_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = config("find_ot.json");
    ok(&["find_ot", "--config", cfg.to_str().unwrap(), "--runs", "4", "--seed", "3", "--out", out,
         "--set", "arch.dims=[1,4,4,1]"]);
    let s = summary(dir.path());
    assert_eq!(s["runs"], 4);
    assert_eq!(s["base_seed"], 3);
    assert_eq!(s["config"]["arch"]["dims"], serde_json::json!([1, 4, 4, 1]));
    assert_eq!(s["config"]["method"], "sinkhorn_l2");
    for metric in ["l1", "iterations"] {
        let v = column(dir.path(), metric);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let agg = &s["metrics"][metric];
        assert!((agg["mean"].as_f64().unwrap() - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
        assert!((agg["sd"].as_f64().unwrap() - sd).abs() <= 1e-12 * (1.0 + sd));
    }
}

#[test]
fn set_overrides_reach_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = config("lmc_poly.json");
    ok(&["lmc", "--config", cfg.to_str().unwrap(), "--runs", "1", "--out", out,
         "--set", "method=naive", "--set", "train.epochs=5", "--set", "lmc.grid_points=7"]);
    let s = summary(dir.path());
    assert_eq!(s["method"], "naive");
    assert_eq!(s["config"]["train"]["epochs"], 5);
    let curve = fs::read_to_string(dir.path().join("curve_0.csv")).unwrap();
    assert_eq!(curve.lines().count(), 8);
}

#[test]
fn naive_curves_start_and_end_at_the_checkpoint_costs() {
    let models = tempfile::tempdir().unwrap();
    let cfg = config("lmc_poly.json");
    let cfg = cfg.to_str().unwrap();
    ok(&["train", "--config", cfg, "--runs", "2", "--out", models.path().to_str().unwrap(),
         "--set", "train.epochs=20", "--set", "method=null"]);
    let a = models.path().join("model_0.json");
    let b = models.path().join("model_1.json");
    let before = (fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let ck = format!("checkpoints=[{:?},{:?}]", a.to_str().unwrap(), b.to_str().unwrap());
    ok(&["lmc", "--config", cfg, "--runs", "1", "--out", dir.path().to_str().unwrap(),
         "--set", "method=naive", "--set", &ck]);
    assert_eq!(before, (fs::read(&a).unwrap(), fs::read(&b).unwrap()), "checkpoints were modified");

    let mut r = csv::Reader::from_path(dir.path().join("curve_0.csv")).unwrap();
    let rows: Vec<Vec<f64>> = r.records().map(|x| x.unwrap().iter().map(|f| f.parse().unwrap()).collect()).collect();
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    assert_eq!((first[0], last[0]), (0.0, 1.0));
    assert_eq!(first[1], column(dir.path(), "cost_a")[0]);
    assert_eq!(last[1], column(dir.path(), "cost_b")[0]);
    assert_eq!((first[3], last[3]), (0.0, 0.0));

    let ma = rebasin_core::checkpoint::load_model(&a).unwrap();
    let mb = rebasin_core::checkpoint::load_model(&b).unwrap();
    assert_ne!(ma, mb);
    assert!(first[1] > 0.0 && last[1] > 0.0);
}

#[test]
fn invalid_configs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = config("find_ot.json");
    let cfg = cfg.to_str().unwrap();
    for extra in [
        vec!["--set", "method=finetune"],
        vec!["--set", "no_such_field=1"],
        vec!["--set", "arch.dims=[1]"],
        vec!["--set", "rebasin.sinkhorn.tau=-1"],
    ] {
        let mut args = vec!["find_ot", "--config", cfg, "--runs", "1", "--out", out];
        args.extend(extra.iter().copied());
        let res = run(&args);
        assert!(!res.status.success(), "{extra:?} was accepted");
        assert!(!res.stderr.is_empty());
    }
    assert!(!run(&["find_ot", "--config", "/nonexistent.json"]).status.success());
}
