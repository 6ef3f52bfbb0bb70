use super::*;
use crate::grad::AdamConfig;

/// A grid small enough to run in a unit test: tiny network, few steps,
/// minimum metric sample sizes.
fn tiny(methods: &[(Method, Vec<f64>)], seeds: Vec<u64>) -> StudyConfig {
    StudyConfig {
        schema_version: SCHEMA_VERSION,
        worlds: vec![WorldConfig::dsprites_lite(16)],
        methods: methods.iter().map(|(m, s)| MethodSweep { method: *m, strengths: Some(s.clone()) }).collect(),
        seeds,
        steps: 3,
        train: TrainOptions { encoder_hidden: vec![16], latent_dim: 4, batch_size: 16, ..TrainOptions::default() },
        metrics: MetricsConfig {
            n_train: 1000,
            n_test: 500,
            batch_size: 8,
            n_variance: 500,
            logistic_iterations: 20,
            ..MetricsConfig::default()
        },
        unsupervised_samples: 1000,
        workers: None,
    }
}

fn run(config: &StudyConfig, workers: usize) -> RecordStore {
    let mut store = RecordStore::new();
    run_study(config, &mut store, &RunOptions { workers, ..RunOptions::default() }).unwrap();
    store
}

#[test]
fn single_cell_writes_ten_records() {
    let store = run(&tiny(&[(Method::BetaVae, vec![4.0])], vec![0]), 1);
    assert_eq!(store.run_ids().len(), 1);
    assert_eq!(store.len(), 10);
    let names: Vec<&str> = store.records().iter().map(|r| r.metric.as_str()).collect();
    assert_eq!(names, RECORD_METRICS);
    assert!(store.records().iter().all(|r| r.is_ok()));
    assert_eq!(store.records()[0].run_id, "dsprites-lite-16__beta_vae__beta=4__seed0");
}

#[test]
fn grid_size_and_determinism_across_worker_counts() {
    let config =
        tiny(&[(Method::BetaVae, vec![1.0, 4.0, 16.0]), (Method::BetaTcvae, vec![1.0, 4.0, 8.0])], (0..5).collect());
    assert_eq!(config.cells().len(), 30);
    let a = run(&config, 1);
    assert_eq!(a.run_ids().len(), 30);
    let b = run(&config, 3);
    assert_eq!(a.to_csv_bytes().unwrap(), b.to_csv_bytes().unwrap());
}

#[test]
fn rerun_requires_force() {
    let config = tiny(&[(Method::DipVaeI, vec![1.0])], vec![2]);
    let mut store = run(&config, 1);
    let before = store.to_csv_bytes().unwrap();
    let err = run_study(&config, &mut store, &RunOptions { workers: 1, ..RunOptions::default() }).unwrap_err();
    assert!(matches!(err, Error::Duplicate(_)));
    run_study(&config, &mut store, &RunOptions { workers: 1, force: true, ..RunOptions::default() }).unwrap();
    assert_eq!(store.to_csv_bytes().unwrap(), before);
}

#[test]
fn failed_runs_are_recorded() {
    let mut config = tiny(&[(Method::BetaVae, vec![1.0])], vec![0]);
    config.steps = 50;
    config.train.adam = AdamConfig { lr: 1e6, ..AdamConfig::default() };
    let store = run(&config, 1);
    assert_eq!(store.len(), 10);
    assert!(store.records().iter().all(|r| r.status == Status::Failed && r.value.is_nan()));
}

#[test]
fn store_is_saved_after_each_cell() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.csv");
    let config = tiny(&[(Method::BetaVae, vec![1.0, 2.0])], vec![0]);
    let mut store = RecordStore::new();
    let opts = RunOptions {
        workers: 2,
        store_path: Some(path.clone()),
        checkpoint_dir: Some(dir.path().join("ckpt")),
        ..RunOptions::default()
    };
    run_study(&config, &mut store, &opts).unwrap();
    assert_eq!(
        RecordStore::load(&path).unwrap(),
        RecordStore::read_csv(store.to_csv_bytes().unwrap().as_slice()).unwrap()
    );
    assert_eq!(std::fs::read_dir(dir.path().join("ckpt")).unwrap().count(), 2);
}

#[test]
fn config_schema_is_strict() {
    let good = r#"{"schema_version": 1, "worlds": [{"kind": "dsprites-lite"}],
        "methods": [{"method": "beta_vae", "strengths": [1, 2]}], "seeds": [0], "steps": 10}"#;
    let c = StudyConfig::from_json(good).unwrap();
    assert_eq!(c.cells().len(), 2);
    let unknown = good.replace("\"steps\": 10", "\"steps\": 10, \"stpes\": 3");
    assert!(matches!(StudyConfig::from_json(&unknown), Err(Error::Json(_))));
    let version = good.replace("\"schema_version\": 1", "\"schema_version\": 2");
    assert!(matches!(StudyConfig::from_json(&version), Err(Error::Config(_))));
    let dup = good.replace("[1, 2]", "[2, 2]");
    assert!(StudyConfig::from_json(&dup).is_err());
    let default_sweep = good.replace(", \"strengths\": [1, 2]", "");
    assert_eq!(StudyConfig::from_json(&default_sweep).unwrap().cells().len(), 6);
}

#[test]
fn worker_resolution_order() {
    assert_eq!(resolve_workers(Some(2), Some("3"), Some(4)).unwrap(), 2);
    assert_eq!(resolve_workers(None, Some("3"), Some(4)).unwrap(), 3);
    assert_eq!(resolve_workers(None, None, Some(4)).unwrap(), 4);
    assert_eq!(resolve_workers(None, Some(""), Some(4)).unwrap(), 4);
    assert!(resolve_workers(None, Some("many"), None).is_err());
    assert!(resolve_workers(Some(0), None, None).is_err());
    assert!(resolve_workers(None, None, None).unwrap() >= 1);
}

#[test]
fn analysis_writes_all_outputs() {
    let store = run(&tiny(&[(Method::BetaVae, vec![1.0, 8.0])], vec![0, 1, 2]), 1);
    let dir = tempfile::tempdir().unwrap();
    let summary = analyze(&store, dir.path(), &AnalysisOptions { transfer_trials: 100, seed: 1 }).unwrap();
    for f in ["anova.tsv", "transfer.json", "analysis.json", "score_distribution.tsv", "score_vs_strength.tsv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(summary.anova.iter().all(|a| (0.0..=1.0).contains(&a.fraction)));
    assert!(summary.transfer.iter().any(|t| t.result.is_some()));
}

#[test]
fn precomputed_codes_full_grid_and_sample() {
    use crate::metrics::ExactFactors;
    let world = FactorWorld::new(WorldConfig::dsprites_lite(16)).unwrap();
    let grid = world.enumerate_grid().unwrap();
    let codes = ExactFactors::for_world(&world).represent(&grid).unwrap();
    let cfg = MetricsConfig::default();
    let full = score_precomputed(&world, &grid, &codes, &cfg, 3).unwrap();
    assert_eq!(full.iter().map(|(m, _)| m.as_str()).collect::<Vec<_>>(), crate::metrics::METRIC_NAMES);
    assert!(full.iter().all(|(m, v)| *v >= if m == "sap" { 0.9 } else { 0.99 }), "{full:?}");

    let sample = world.sample_factors(3000, 8);
    let codes = ExactFactors::for_world(&world).represent(&sample).unwrap();
    let part = score_precomputed(&world, &sample, &codes, &cfg, 3).unwrap();
    assert_eq!(part.iter().map(|(m, _)| m.as_str()).collect::<Vec<_>>(), ["mig", "modularity", "dci", "sap"]);
}
