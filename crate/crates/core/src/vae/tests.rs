use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::grad::{affine, tc_mws, AdamConfig, Tensor2};
use crate::rng;
use crate::worlds::{FactorWorld, WorldConfig};

fn world() -> FactorWorld {
    FactorWorld::new(WorldConfig::dsprites_lite(16)).unwrap()
}

fn small_options() -> TrainOptions {
    TrainOptions { encoder_hidden: vec![32], latent_dim: 4, log_every: 0, ..TrainOptions::default() }
}

/// Posterior means with covariance `[[v, c], [c, v]]` and a fixed posterior
/// variance, so the aggregate code is Gaussian with covariance
/// `[[v + s2, c], [c, v + s2]]`.
fn gaussian_posteriors(n: usize, v: f64, c: f64, s2: f64, seed: u64) -> (Tensor2, Tensor2, Tensor2) {
    let mut r = rng::stream(seed, 0);
    // Cholesky factor of [[v, c], [c, v]]
    let l11 = v.sqrt();
    let l21 = c / l11;
    let l22 = (v - l21 * l21).sqrt();
    let mut mu = Vec::with_capacity(2 * n);
    let mut z = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let (a, b): (f64, f64) = (r.sample(StandardNormal), r.sample(StandardNormal));
        let m = [l11 * a, l21 * a + l22 * b];
        for mj in m {
            let e: f64 = r.sample(StandardNormal);
            mu.push(mj);
            z.push(mj + s2.sqrt() * e);
        }
    }
    let mu = Tensor2::new(n, 2, mu).unwrap();
    let z = Tensor2::new(n, 2, z).unwrap();
    (z, mu, Tensor2::filled(n, 2, s2.ln()))
}

fn analytic_tc(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

#[test]
fn mws_estimator_matches_gaussian_tc() {
    let (z, mu, lv) = gaussian_posteriors(10_000, 0.9, 0.8, 0.1, 11);
    let est = tc_mws(&z, &mu, &lv);
    let truth = analytic_tc(0.8);
    assert!((est - truth).abs() / truth < 0.15, "estimate {est}, analytic {truth}");
}

#[test]
fn mws_estimator_near_zero_on_factorized_codes() {
    let (z, mu, lv) = gaussian_posteriors(10_000, 0.9, 0.0, 0.1, 12);
    let est = tc_mws(&z, &mu, &lv);
    assert!(est.abs() < 0.05, "estimate {est}");
}

#[test]
fn forward_pass_matches_stored_parameters() {
    let ckpt = train_with(&world(), &ObjectiveConfig::BetaVae { beta: 1.0 }, 1, 3, &small_options()).unwrap();
    let batch = world().render(&world().sample_factors(5, 1)).unwrap();
    let reps = ckpt.encode(&batch).unwrap();

    // recompute from the raw named parameters
    let p = &ckpt.model.encoder;
    let get = |name: &str| p.value(p.index_of(name).unwrap()).clone();
    let x = Tensor2::from_f32(5, batch.width(), batch.data()).unwrap();
    let h = affine(&x, &get("enc.0.w"), &get("enc.0.b")).unwrap().map(f64::tanh);
    let mu = affine(&h, &get("enc.mu.w"), &get("enc.mu.b")).unwrap();
    assert_eq!(reps.data(), mu.data());
    assert_eq!(reps, ckpt.encode(&batch).unwrap());
}

#[test]
fn encode_handles_empty_and_rejects_wrong_width() {
    let ckpt = train_with(&world(), &ObjectiveConfig::BetaVae { beta: 1.0 }, 1, 0, &small_options()).unwrap();
    let empty = crate::worlds::ObservationBatch::new(256, vec![]).unwrap();
    let reps = ckpt.encode(&empty).unwrap();
    assert_eq!((reps.rows(), reps.cols()), (0, 4));
    let wrong = crate::worlds::ObservationBatch::new(10, vec![0.0; 10]).unwrap();
    assert!(matches!(ckpt.encode(&wrong), Err(crate::Error::Shape(_))));
}

#[test]
fn same_seed_gives_bit_identical_checkpoints() {
    for cfg in [ObjectiveConfig::FactorVae { gamma_tc: 10.0 }, ObjectiveConfig::BetaTcvae { beta: 4.0 }] {
        let a = train_with(&world(), &cfg, 20, 7, &small_options()).unwrap();
        let b = train_with(&world(), &cfg, 20, 7, &small_options()).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        let c = train_with(&world(), &cfg, 20, 8, &small_options()).unwrap();
        assert_ne!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
    }
}

#[test]
fn checkpoint_round_trips_through_bytes() {
    let ckpt =
        train_with(&world(), &ObjectiveConfig::DipVaeII { lambda_od: 2.0, lambda_d: 2.0 }, 7, 1, &small_options())
            .unwrap();
    assert_eq!(ckpt.history.len(), 7);
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.model.encoder.value(0), ckpt.model.encoder.value(0));

    let mut truncated = bytes.clone();
    truncated.truncate(bytes.len() - 3);
    assert!(Checkpoint::read_from(truncated.as_slice()).is_err());
    let mut extended = bytes;
    extended.push(0);
    assert!(Checkpoint::read_from(extended.as_slice()).is_err());
}

#[test]
fn every_method_trains_a_few_steps() {
    for m in Method::ALL {
        let cfg = m.config_for_strength(m.default_sweep()[1], 10);
        let ckpt = train_with(&world(), &cfg, 10, 2, &small_options()).unwrap();
        assert_eq!(ckpt.steps(), 10, "{m}");
        assert!(ckpt.history.recon.iter().all(|v| v.is_finite()), "{m}");
    }
}

#[test]
fn zero_steps_and_bad_batches_are_config_errors() {
    let cfg = ObjectiveConfig::BetaVae { beta: 1.0 };
    assert!(matches!(train(&world(), &cfg, 0, 0), Err(crate::Error::Config(_))));
    let opts = TrainOptions { batch_size: 3, ..small_options() };
    assert!(matches!(train_with(&world(), &cfg, 1, 0, &opts), Err(crate::Error::Config(_))));
}

#[test]
fn huge_learning_rate_reports_divergence_step() {
    let opts = TrainOptions { adam: AdamConfig { lr: 1e6, ..AdamConfig::default() }, ..small_options() };
    match train_with(&world(), &ObjectiveConfig::BetaVae { beta: 1.0 }, 200, 0, &opts) {
        Err(crate::Error::Diverged { step, .. }) => assert!(step > 0 && step < 200),
        other => panic!("expected divergence, got {:?}", other.map(|c| c.steps())),
    }
}

#[test]
fn beta_one_reduces_reconstruction_in_500_steps() {
    let ckpt = train(&world(), &ObjectiveConfig::BetaVae { beta: 1.0 }, 500, 0).unwrap();
    let r = &ckpt.history.recon;
    let first: f64 = r[..20].iter().sum::<f64>() / 20.0;
    let last: f64 = r[r.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(last < first, "initial {first}, final {last}");
}

#[test]
fn huge_beta_collapses_the_posterior() {
    let ckpt = train(&world(), &ObjectiveConfig::BetaVae { beta: 1000.0 }, 1000, 0).unwrap();
    let kl = &ckpt.history.kl;
    let tail: f64 = kl[kl.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(tail < 0.1, "mean KL over last 100 steps {tail}");
}

#[test]
fn elbo_evaluation_is_seeded() {
    let ckpt = train_with(&world(), &ObjectiveConfig::BetaVae { beta: 1.0 }, 5, 0, &small_options()).unwrap();
    let obs = world().render(&world().sample_factors(50, 9)).unwrap();
    let a = ckpt.evaluate_elbo(&obs, 1).unwrap();
    assert_eq!(a, ckpt.evaluate_elbo(&obs, 1).unwrap());
    assert!(a.0 > 0.0 && a.1 >= 0.0);
}
