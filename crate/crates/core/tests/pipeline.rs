use untangle_core::metrics::{evaluate_all, EncoderRepresentation, MetricsConfig, METRIC_NAMES};
use untangle_core::tensor_io;
use untangle_core::vae::{train_with, Checkpoint, Method, TrainOptions};
use untangle_core::worlds::{FactorMatrix, FactorWorld, WorldConfig};

fn tiny() -> TrainOptions {
    TrainOptions { encoder_hidden: vec![32], latent_dim: 4, log_every: 0, ..TrainOptions::default() }
}

fn small_metrics() -> MetricsConfig {
    MetricsConfig {
        n_train: 1000,
        n_test: 500,
        batch_size: 8,
        n_variance: 500,
        logistic_iterations: 20,
        ..MetricsConfig::default()
    }
}

#[test]
fn checkpoint_survives_disk_and_scores_are_bounded() {
    let world = FactorWorld::new(WorldConfig::dsprites_lite(16)).unwrap();
    let objective = Method::BetaTcvae.config_for_strength(4.0, 40);
    let ckpt = train_with(&world, &objective, 40, 3, &tiny()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes().unwrap(), ckpt.to_bytes().unwrap());

    let factors = world.sample_factors(200, 9);
    let obs = world.render(&factors).unwrap();
    assert_eq!(loaded.encode(&obs).unwrap(), ckpt.encode(&obs).unwrap());

    let rep = EncoderRepresentation { world: &world, checkpoint: &loaded };
    let reports = evaluate_all(&world, &rep, &small_metrics(), 1).unwrap();
    for name in METRIC_NAMES {
        let r = reports.iter().find(|r| r.metric == name).unwrap_or_else(|| panic!("{name} missing"));
        assert!((0.0..=1.0).contains(&r.score), "{name} = {}", r.score);
    }
}

#[test]
fn factor_tensors_round_trip_through_files() {
    let world = FactorWorld::new(WorldConfig::dsprites_lite(16)).unwrap();
    let factors = world.sample_factors(500, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("factors.dtns");
    tensor_io::save(&path, &factors.to_tensor().unwrap()).unwrap();
    let back = FactorMatrix::from_tensor(&tensor_io::load(&path).unwrap(), world.space().cardinalities()).unwrap();
    assert_eq!(back, factors);
}
