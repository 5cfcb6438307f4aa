use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rce::checkpoint::Checkpoint;
use rce::dataset::Dataset;
use rce::experiment::{PlanningConfig, SweepConfig};
use rce_core::model::ModelDims;
use rce_core::planner::PlanConfig;
use rce_core::training::TrainConfig;
use rce_core::Architecture;

fn rce(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rce"));
    cmd.args(args).env_remove("RCE_SEED");
    if let Some(s) = seed {
        cmd.env("RCE_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str], seed: Option<&str>) {
    let out = rce(args, seed);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        arch: Architecture::uniform(ModelDims::PLANAR, 8),
        epochs: 2,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

fn tiny_planning_config() -> PlanningConfig {
    PlanningConfig {
        runs: 2,
        steps: 4,
        planner: PlanConfig {
            horizon: 4,
            ilqr_iters: 2,
            ..PlanConfig::planar(2, 2)
        },
        ..PlanningConfig::default()
    }
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, v: &T) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen-data, train, eval and plan into `dir`.
fn pipeline(dir: &Path, seed: Option<&str>) {
    let train_cfg = write_json(dir, "train.json", &tiny_train_config());
    let plan_cfg = write_json(dir, "plan.json", &tiny_planning_config());
    let (data, ckpt) = (dir.join("train.rced"), dir.join("model.ckpt"));
    ok(&["gen-data", "--env", "planar", "--n", "48", "--sigma", "1", "--seed", "3", "--out", s(&data)], seed);
    ok(
        &["train", "--data", s(&data), "--config", s(&train_cfg), "--out", s(&ckpt), "--log", s(&dir.join("log.csv"))],
        seed,
    );
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--report", s(&dir.join("eval.csv"))], seed);
    ok(
        &[
            "plan", "--ckpt", s(&ckpt), "--env", "planar", "--sigma", "1", "--runs", "2", "--seed", "5", "--config",
            s(&plan_cfg), "--report", s(&dir.join("plan.csv")), "--traces", s(&dir.join("traces")),
        ],
        seed,
    );
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), None);
    let data = Dataset::read(&dir.path().join("train.rced")).unwrap();
    assert_eq!(data.triples.len(), 48);
    assert_eq!(data.header.seed, 3);
    let ckpt = Checkpoint::read(&dir.path().join("model.ckpt")).unwrap();
    assert_eq!(ckpt.epoch, 2);
    assert_eq!(ckpt.train_config, tiny_train_config());

    let log = fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("# config_hash="));
    let eval = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert!(eval.lines().nth(1).unwrap().starts_with("noise_sigma,"));
    let plan = fs::read_to_string(dir.path().join("plan.csv")).unwrap();
    assert_eq!(plan.lines().count(), 4);
    for i in 0..2 {
        let trace = fs::read_to_string(dir.path().join(format!("traces/run{i:02}.csv"))).unwrap();
        // comment, column names, initial state and four steps
        assert_eq!(trace.lines().count(), 2 + 5);
        let png = fs::read(dir.path().join(format!("traces/run{i:02}.png"))).unwrap();
        assert_eq!(&png[1..4], b"PNG");
    }
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), Some("42"));
    pipeline(b.path(), Some("42"));
    for name in ["train.rced", "model.ckpt", "log.csv", "eval.csv", "plan.csv", "traces/run00.csv", "traces/run01.png"] {
        let (x, y) = (fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        assert!(x == y, "{name} differs");
    }
    // the environment seed wins over the flags
    assert_eq!(Dataset::read(&a.path().join("train.rced")).unwrap().header.seed, 42);
    let c = tempfile::tempdir().unwrap();
    pipeline(c.path(), Some("43"));
    assert_ne!(fs::read(a.path().join("model.ckpt")).unwrap(), fs::read(c.path().join("model.ckpt")).unwrap());
}

#[test]
fn sweep_writes_one_row_per_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SweepConfig {
        sigmas: vec![0.0],
        n_train: 32,
        n_test: 8,
        train: tiny_train_config(),
        planning: tiny_planning_config(),
        seed: 1,
    };
    let cfg_path = write_json(dir.path(), "sweep.json", &cfg);
    let out = dir.path().join("table.csv");
    ok(
        &[
            "sweep", "--sigmas", "0,2", "--config", s(&cfg_path), "--out", s(&out), "--ckpt-dir",
            s(&dir.path().join("ckpt")),
        ],
        None,
    );
    let table = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0,") && rows[1].starts_with("2,"));
    assert!(dir.path().join("ckpt/sigma2.ckpt").exists());
}

fn fails_with_one_line(args: &[&str], seed: Option<&str>) -> String {
    let out = rce(args, seed);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
    err
}

#[test]
fn errors_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.rced");
    fails_with_one_line(&["eval", "--ckpt", s(&missing), "--data", s(&missing), "--report", "x.csv"], None);
    fails_with_one_line(&["gen-data", "--n", "0", "--out", s(&dir.path().join("d.rced"))], None);
    fails_with_one_line(&["gen-data", "--n", "3", "--sigma=-1", "--out", s(&dir.path().join("d.rced"))], None);
    fails_with_one_line(&["gen-data", "--n", "3", "--out", s(&dir.path().join("d.rced"))], Some("abc"));

    // a corrupted dataset is refused before training
    let data = dir.path().join("d.rced");
    ok(&["gen-data", "--n", "4", "--out", s(&data)], None);
    let mut bytes = fs::read(&data).unwrap();
    bytes[100] ^= 1;
    fs::write(&data, bytes).unwrap();
    let err = fails_with_one_line(&["train", "--data", s(&data), "--out", s(&dir.path().join("m.ckpt"))], None);
    assert!(err.contains("checksum"), "{err}");

    let bad_cfg = dir.path().join("bad.json");
    fs::write(&bad_cfg, r#"{"epochs": 0}"#).unwrap();
    ok(&["gen-data", "--n", "4", "--out", s(&data)], None);
    fails_with_one_line(
        &["train", "--data", s(&data), "--config", s(&bad_cfg), "--out", s(&dir.path().join("m.ckpt"))],
        None,
    );
    fs::write(&bad_cfg, "{ not json").unwrap();
    fails_with_one_line(
        &["train", "--data", s(&data), "--config", s(&bad_cfg), "--out", s(&dir.path().join("m.ckpt"))],
        None,
    );
}
