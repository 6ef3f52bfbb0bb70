use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, History};
use super::discriminator::Discriminator;
use super::model::{Architecture, VaeModel};
use super::objective::{objective_loss, BatchTerms, ObjectiveConfig};
use crate::grad::{AdamConfig, Graph, Tensor2};
use crate::rng::{self, streams};
use crate::worlds::{FactorWorld, ObservationBatch};
use crate::{Error, Result};

/// Losses with magnitude above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Everything except the objective, step count and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Progress is logged every `log_every` steps; 0 disables logging.
    pub log_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
            encoder_hidden: vec![256, 128],
            latent_dim: 10,
            log_every: 100,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return Err(Error::Config(format!("batch_size must be even and at least 4, got {}", self.batch_size)));
        }
        for (name, a) in [("adam", &self.adam), ("discriminator_adam", &self.discriminator_adam)] {
            let ok = [a.lr, a.beta1, a.beta2, a.eps].iter().all(|v| v.is_finite())
                && a.lr > 0.0
                && (0.0..1.0).contains(&a.beta1)
                && (0.0..1.0).contains(&a.beta2)
                && a.eps > 0.0;
            if !ok {
                return Err(Error::Config(format!("{name}: invalid optimizer settings {a:?}")));
            }
        }
        Ok(())
    }
}

/// Per-step training statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub recon: f64,
    pub kl: f64,
    pub regularizer: f64,
}

fn to_tensor(batch: &ObservationBatch) -> Tensor2 {
    Tensor2::from_f32(batch.rows(), batch.width(), batch.data()).expect("batch dimensions are consistent")
}

fn diverged(step: usize, err: Error) -> Error {
    match err {
        Error::Numeric(detail) => Error::Diverged { step, detail },
        other => other,
    }
}

/// Trains with [`TrainOptions::default`].
pub fn train(world: &FactorWorld, config: &ObjectiveConfig, steps: usize, seed: u64) -> Result<Checkpoint> {
    train_with(world, config, steps, seed, &TrainOptions::default())
}

/// Trains a VAE on fresh batches drawn from `world`. Deterministic in
/// `(world, config, steps, seed, options)`. FactorVAE alternates one model
/// step with one discriminator step on the same batch's sampled codes.
pub fn train_with(
    world: &FactorWorld,
    config: &ObjectiveConfig,
    steps: usize,
    seed: u64,
    options: &TrainOptions,
) -> Result<Checkpoint> {
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    config.validate()?;
    options.validate()?;
    let architecture = Architecture {
        input_dim: world.pixels(),
        encoder_hidden: options.encoder_hidden.clone(),
        latent_dim: options.latent_dim,
    };
    let mut model = VaeModel::init(architecture.clone(), &mut rng::stream(seed, streams::INIT))?;
    let mut discriminator = match config {
        ObjectiveConfig::FactorVae { .. } => Some(Discriminator::new(
            architecture.latent_dim,
            options.discriminator_adam,
            &mut rng::stream(seed, streams::DISCRIMINATOR),
        )),
        _ => None,
    };
    let mut batches = rng::stream(seed, streams::BATCHES);
    let mut noise_rng = rng::stream(seed, streams::NOISE);
    let mut perm_rng = rng::stream(seed, streams::PERMUTATION);
    let mut history = History::with_capacity(steps);
    let (b, d) = (options.batch_size, architecture.latent_dim);

    for step in 0..steps {
        let factors = world.sample_factors_with(b, &mut batches);
        let x = to_tensor(&world.render(&factors)?);
        let noise = Tensor2::new(b, d, (0..b * d).map(|_| noise_rng.sample(StandardNormal)).collect())?;

        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let xn = g.leaf(x.clone());
        let (mu, log_var) = model.encoder_graph(&mut g, &bound, xn)?;
        let z = g.gaussian_reparameterize(mu, log_var, noise)?;
        let logits = model.decoder_graph(&mut g, &bound, z)?;
        let recon = g.bernoulli_recon(logits, x).map_err(|e| diverged(step, e))?;
        let kl = g.gaussian_kl_to_standard(mu, log_var).map_err(|e| diverged(step, e))?;
        let terms = BatchTerms { recon, kl, mu, log_var, z };
        let bound_disc = discriminator.as_ref().map(|disc| disc.bind(&mut g));
        let out = objective_loss(config, &mut g, &terms, step, bound_disc.as_ref()).map_err(|e| diverged(step, e))?;
        let stats =
            StepStats { step, recon: g.value(recon).item(), kl: g.value(kl).item(), regularizer: out.regularizer };
        let loss = g.value(out.loss).item();
        if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                step,
                detail: format!(
                    "loss {loss} (recon {}, kl {}, regularizer {})",
                    stats.recon, stats.kl, stats.regularizer
                ),
            });
        }
        let mut grads = g.backward(out.loss)?;
        let enc_grads = bound.encoder().gradients(&mut grads);
        let dec_grads = bound.decoder().gradients(&mut grads);
        let codes = g.value(z).clone();
        drop(bound_disc);
        model.encoder.adam_step(&enc_grads, &options.adam)?;
        model.decoder.adam_step(&dec_grads, &options.adam)?;
        if let Some(disc) = discriminator.as_mut() {
            disc.step(&codes, &mut perm_rng).map_err(|e| diverged(step, e))?;
        }
        history.push(&stats);
        if options.log_every > 0 && (step + 1) % options.log_every == 0 {
            log::info!(
                "step {} recon {:.4} kl {:.4} regularizer {:.4}",
                step + 1,
                stats.recon,
                stats.kl,
                stats.regularizer
            );
        }
    }
    Ok(Checkpoint {
        objective: *config,
        world: world.config().clone(),
        world_hash: world.manifest_hash(),
        seed,
        model,
        history,
    })
}
