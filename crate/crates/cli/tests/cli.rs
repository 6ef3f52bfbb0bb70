use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn untangle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_untangle"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("UNTANGLE_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = untangle(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_TRAIN: [&str; 6] =
    ["--set", "train.encoder_hidden=[32]", "--set", "train.latent_dim=4", "--set", "train.log_every=0"];

#[test]
fn help_and_version() {
    for sub in ["generate", "train", "encode", "evaluate", "study", "analyze", "impossibility"] {
        let out = untangle(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--out"), "{sub}");
    }
    let out = untangle(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("untangle "));
}

#[test]
fn usage_errors_exit_one() {
    let out = untangle(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("E_USAGE: "));
    let out = untangle(&["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("E_USAGE: "), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    fs::write(&cfg, r#"{"steps": 10, "stpes": 20}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = untangle(&["train", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("E_SCHEMA: ") && err.contains("stpes"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
    let m = manifest(&out_dir);
    assert_eq!(m["status"], "failed");
    assert_eq!(m["error"]["code"], "E_SCHEMA");

    let out = untangle(&["evaluate", "--ckpt", "x", "--set", "metrics.binz=3", "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("E_SCHEMA: "));
}

#[test]
fn missing_inputs_and_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = untangle(&["evaluate", "--ckpt", p(&dir.path().join("none.ckpt")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("E_INPUT: "));

    let mut args = vec!["train", "--steps", "40", "--set", "train.adam.lr=1e6", "--out", p(dir.path())];
    args.extend(TINY_TRAIN);
    let out = untangle(&args);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("E_RUNTIME: "));
    assert_eq!(manifest(dir.path())["error"]["code"], "E_RUNTIME");
}

#[test]
fn generate_train_encode_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);

    ok(&["generate", "--samples", "3000", "--seed", "5", "--out", p(&d("data"))]);
    for f in ["world.json", "factors.dtns", "observations.dtns", "run_manifest.json"] {
        assert!(d("data").join(f).exists(), "{f}");
    }

    let train_dir = d("train");
    let mut args = vec!["train", "--method", "beta_tcvae", "--strength", "6", "--steps", "500", "--out", p(&train_dir)];
    args.extend(TINY_TRAIN);
    ok(&args);
    let m = manifest(&d("train"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["objective"], serde_json::json!({"method": "beta_tcvae", "beta": 6.0}));
    assert_eq!(m["config"]["train"]["latent_dim"], 4);
    assert!(!m["version"].as_str().unwrap().is_empty());
    assert_eq!(csv_rows(&d("train/history.tsv")).len(), 501);

    let ckpt = d("train/model.ckpt");
    ok(&["encode", "--ckpt", p(&ckpt), "--data", p(&d("data")), "--out", p(&d("enc"))]);

    ok(&["evaluate", "--ckpt", p(&ckpt), "--out", p(&d("eval"))]);
    let rows = csv_rows(&d("eval/scores.csv"));
    assert_eq!(rows[0], "run_id,world,method,hparam_name,hparam_value,seed,metric,value,status");
    assert!(rows.len() > 10);
    assert!(rows[1..]
        .iter()
        .all(|r| r.starts_with("dsprites-lite-16__beta_tcvae__beta=6__seed0,") && r.ends_with(",ok")));

    ok(&[
        "evaluate",
        "--reps",
        p(&d("enc/reps.dtns")),
        "--factors",
        p(&d("enc/factors.dtns")),
        "--world",
        p(&d("enc/world.json")),
        "--out",
        p(&d("eval2")),
    ]);
    let metrics: Vec<String> =
        csv_rows(&d("eval2/scores.csv"))[1..].iter().map(|r| r.split(',').nth(6).unwrap().to_string()).collect();
    assert_eq!(metrics, ["dci", "mig", "modularity", "sap"]);
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--steps", "60", "--seed", "9", "--out", p(&out)];
        args.extend(TINY_TRAIN);
        ok(&args);
        let ckpt = out.join("model.ckpt");
        let ev = out.join("eval");
        ok(&["evaluate", "--ckpt", p(&ckpt), "--seed", "2", "--set", "unsupervised_samples=2000", "--out", p(&ev)]);
        (fs::read(ckpt).unwrap(), fs::read(ev.join("scores.csv")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn study_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.json");
    fs::write(
        &cfg,
        r#"{"schema_version": 1, "worlds": [{"kind": "dsprites-lite", "size": 16}],
            "methods": [{"method": "beta_vae", "strengths": [1, 8]}], "seeds": [0, 1], "steps": 3,
            "train": {"encoder_hidden": [16], "latent_dim": 4, "batch_size": 16, "log_every": 0},
            "metrics": {"n_train": 1000, "n_test": 500, "batch_size": 8, "n_variance": 500, "logistic_iterations": 20},
            "unsupervised_samples": 1000}"#,
    )
    .unwrap();
    let out = dir.path().join("study");
    ok(&["study", "--config", p(&cfg), "--workers", "2", "--save-checkpoints", "--out", p(&out)]);
    let rows = csv_rows(&out.join("scores.csv"));
    assert_eq!(rows.len(), 1 + 4 * 10);
    assert_eq!(fs::read_dir(out.join("checkpoints")).unwrap().count(), 4);

    let again = untangle(&["study", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).starts_with("E_DUPLICATE: "));
    ok(&["study", "--config", p(&cfg), "--force", "--workers", "1", "--out", p(&out)]);
    assert_eq!(csv_rows(&out.join("scores.csv")), rows);

    ok(&["study", "--config", p(&cfg), "--seed", "7", "--out", p(&out)]);
    assert_eq!(csv_rows(&out.join("scores.csv")).len(), 1 + 6 * 10);

    let an = dir.path().join("analysis");
    ok(&["analyze", "--store", p(&out.join("scores.csv")), "--trials", "200", "--out", p(&an)]);
    for f in ["anova.tsv", "transfer.json", "analysis.json", "run_manifest.json"] {
        assert!(an.join(f).exists(), "{f}");
    }
    let outputs = manifest(&an)["outputs"].as_array().unwrap().len();
    assert!(outputs >= 3);
}

#[test]
fn impossibility_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["impossibility", "--d", "3", "--n", "20000", "--seed", "4", "--out", p(dir.path())]);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pushforward_identical"], true);
    assert!(report["identity"]["gap"].as_f64().unwrap() > 0.0);
    let scatter = csv_rows(&dir.path().join("scatter.tsv"));
    assert_eq!(scatter[0], "z0\tz1\tz2\tz_hat0\tz_hat1\tz_hat2");
    assert_eq!(scatter.len(), 501);
}
