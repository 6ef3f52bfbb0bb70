//! The six regularized objectives.
//!
//! Every objective is `recon + KL + regularizer` except β-VAE and AnnealedVAE,
//! which replace the KL weight:
//!
//! | method        | loss                                              |
//! |---------------|---------------------------------------------------|
//! | `beta_vae`    | `recon + β·KL`                                    |
//! | `annealed_vae`| `recon + γ·|KL − C(step)|`                        |
//! | `factor_vae`  | `recon + KL + γ_tc·TC_disc`                       |
//! | `beta_tcvae`  | `recon + KL + (β − 1)·TC_mws`                     |
//! | `dip_vae_i`   | `recon + KL + λ_od·Σ_{i≠j}C_ij² + λ_d·Σ(C_ii − 1)²`, `C = Cov[mu]` |
//! | `dip_vae_ii`  | same penalty with `C = Cov[mu] + E[diag(exp(log_var))]` |

use std::fmt;

use serde::{Deserialize, Serialize};

use super::discriminator::BoundDiscriminator;
use crate::grad::{Graph, NodeId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BetaVae,
    AnnealedVae,
    FactorVae,
    BetaTcvae,
    #[serde(rename = "dip_vae_i")]
    DipVaeI,
    #[serde(rename = "dip_vae_ii")]
    DipVaeII,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::BetaVae, Method::AnnealedVae, Method::FactorVae, Method::BetaTcvae, Method::DipVaeI, Method::DipVaeII];

    pub fn name(&self) -> &'static str {
        match self {
            Method::BetaVae => "beta_vae",
            Method::AnnealedVae => "annealed_vae",
            Method::FactorVae => "factor_vae",
            Method::BetaTcvae => "beta_tcvae",
            Method::DipVaeI => "dip_vae_i",
            Method::DipVaeII => "dip_vae_ii",
        }
    }

    pub fn parse(name: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Name of the regularization-strength hyperparameter swept for this
    /// method.
    pub fn strength_name(&self) -> &'static str {
        match self {
            Method::BetaVae | Method::BetaTcvae => "beta",
            Method::AnnealedVae => "c_max",
            Method::FactorVae => "gamma_tc",
            Method::DipVaeI | Method::DipVaeII => "lambda_od",
        }
    }

    /// Default six-point regularization sweep.
    pub fn default_sweep(&self) -> [f64; 6] {
        match self {
            Method::BetaVae => [1.0, 2.0, 4.0, 6.0, 8.0, 16.0],
            Method::AnnealedVae => [5.0, 10.0, 25.0, 50.0, 75.0, 100.0],
            Method::FactorVae => [10.0, 20.0, 30.0, 40.0, 50.0, 100.0],
            Method::BetaTcvae => [1.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            Method::DipVaeI | Method::DipVaeII => [1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
        }
    }

    /// Full config for one sweep point. AnnealedVAE uses γ = 1000 and anneals
    /// over 90% of `steps`; DIP-VAE-I uses λ_d = 10·λ_od and DIP-VAE-II uses
    /// λ_d = λ_od.
    pub fn config_for_strength(&self, strength: f64, steps: usize) -> ObjectiveConfig {
        match self {
            Method::BetaVae => ObjectiveConfig::BetaVae { beta: strength },
            Method::AnnealedVae => ObjectiveConfig::AnnealedVae {
                gamma: 1000.0,
                c_max: strength,
                anneal_steps: (steps as f64 * 0.9).round() as usize,
            },
            Method::FactorVae => ObjectiveConfig::FactorVae { gamma_tc: strength },
            Method::BetaTcvae => ObjectiveConfig::BetaTcvae { beta: strength },
            Method::DipVaeI => ObjectiveConfig::DipVaeI { lambda_od: strength, lambda_d: 10.0 * strength },
            Method::DipVaeII => ObjectiveConfig::DipVaeII { lambda_od: strength, lambda_d: strength },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Method plus exactly the hyperparameters that method reads. Unknown or
/// foreign fields are rejected when deserializing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    BetaVae {
        beta: f64,
    },
    AnnealedVae {
        gamma: f64,
        c_max: f64,
        anneal_steps: usize,
    },
    FactorVae {
        gamma_tc: f64,
    },
    BetaTcvae {
        beta: f64,
    },
    #[serde(rename = "dip_vae_i")]
    DipVaeI {
        lambda_od: f64,
        lambda_d: f64,
    },
    #[serde(rename = "dip_vae_ii")]
    DipVaeII {
        lambda_od: f64,
        lambda_d: f64,
    },
}

impl ObjectiveConfig {
    pub fn method(&self) -> Method {
        match self {
            ObjectiveConfig::BetaVae { .. } => Method::BetaVae,
            ObjectiveConfig::AnnealedVae { .. } => Method::AnnealedVae,
            ObjectiveConfig::FactorVae { .. } => Method::FactorVae,
            ObjectiveConfig::BetaTcvae { .. } => Method::BetaTcvae,
            ObjectiveConfig::DipVaeI { .. } => Method::DipVaeI,
            ObjectiveConfig::DipVaeII { .. } => Method::DipVaeII,
        }
    }

    /// Value of the swept hyperparameter.
    pub fn strength(&self) -> f64 {
        match *self {
            ObjectiveConfig::BetaVae { beta } | ObjectiveConfig::BetaTcvae { beta } => beta,
            ObjectiveConfig::AnnealedVae { c_max, .. } => c_max,
            ObjectiveConfig::FactorVae { gamma_tc } => gamma_tc,
            ObjectiveConfig::DipVaeI { lambda_od, .. } | ObjectiveConfig::DipVaeII { lambda_od, .. } => lambda_od,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let values: Vec<(&str, f64)> = match *self {
            ObjectiveConfig::BetaVae { beta } | ObjectiveConfig::BetaTcvae { beta } => {
                vec![("beta", beta)]
            }
            ObjectiveConfig::AnnealedVae { gamma, c_max, .. } => {
                vec![("gamma", gamma), ("c_max", c_max)]
            }
            ObjectiveConfig::FactorVae { gamma_tc } => vec![("gamma_tc", gamma_tc)],
            ObjectiveConfig::DipVaeI { lambda_od, lambda_d } | ObjectiveConfig::DipVaeII { lambda_od, lambda_d } => {
                vec![("lambda_od", lambda_od), ("lambda_d", lambda_d)]
            }
        };
        for (name, v) in values {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{}: {name} must be finite and >= 0, got {v}", self.method())));
            }
        }
        Ok(())
    }

    /// Capacity target `C(step)`: linear from 0 to `c_max` over
    /// `anneal_steps`, constant afterwards. Zero for other methods.
    pub fn capacity(&self, step: usize) -> f64 {
        match *self {
            ObjectiveConfig::AnnealedVae { c_max, anneal_steps, .. } => {
                if anneal_steps == 0 || step >= anneal_steps {
                    c_max
                } else {
                    c_max * step as f64 / anneal_steps as f64
                }
            }
            _ => 0.0,
        }
    }
}

/// Graph nodes for one batch: scalar reconstruction and KL terms, and the
/// per-sample encoder outputs and reparameterized samples.
#[derive(Debug, Clone, Copy)]
pub struct BatchTerms {
    pub recon: NodeId,
    pub kl: NodeId,
    pub mu: NodeId,
    pub log_var: NodeId,
    pub z: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveOutput {
    pub loss: NodeId,
    /// `loss − recon − KL`: how far the objective departs from the negative
    /// ELBO on this batch.
    pub regularizer: f64,
}

/// Builds the loss for `config` on top of the batch terms. FactorVAE needs
/// the discriminator bound on the same graph.
pub fn objective_loss(
    config: &ObjectiveConfig,
    graph: &mut Graph,
    terms: &BatchTerms,
    step: usize,
    discriminator: Option<&BoundDiscriminator>,
) -> Result<ObjectiveOutput> {
    config.validate()?;
    let batch = graph.value(terms.mu).rows();
    if batch < 2 {
        return Err(Error::Validation(format!("objective needs a batch of at least 2, got {batch}")));
    }
    let elbo_terms = graph.add(terms.recon, terms.kl)?;
    let loss = match *config {
        ObjectiveConfig::BetaVae { beta } => {
            let kl = graph.scale(terms.kl, beta);
            graph.add(terms.recon, kl)?
        }
        ObjectiveConfig::AnnealedVae { gamma, .. } => {
            let gap = graph.shift(terms.kl, -config.capacity(step));
            let gap = graph.abs(gap);
            let reg = graph.scale(gap, gamma);
            graph.add(terms.recon, reg)?
        }
        ObjectiveConfig::FactorVae { gamma_tc } => {
            let disc =
                discriminator.ok_or_else(|| Error::Config("factor_vae objective needs a discriminator".into()))?;
            let tc = disc.tc_estimate(graph, terms.z)?;
            let reg = graph.scale(tc, gamma_tc);
            graph.add(elbo_terms, reg)?
        }
        ObjectiveConfig::BetaTcvae { beta } => {
            let tc = graph.tc_mws(terms.z, terms.mu, terms.log_var)?;
            let reg = graph.scale(tc, beta - 1.0);
            graph.add(elbo_terms, reg)?
        }
        ObjectiveConfig::DipVaeI { lambda_od, lambda_d } => {
            let pen = graph.cov_penalty(terms.mu, None, lambda_od, lambda_d)?;
            graph.add(elbo_terms, pen)?
        }
        ObjectiveConfig::DipVaeII { lambda_od, lambda_d } => {
            let pen = graph.cov_penalty(terms.mu, Some(terms.log_var), lambda_od, lambda_d)?;
            graph.add(elbo_terms, pen)?
        }
    };
    let regularizer = graph.value(loss).item() - graph.value(elbo_terms).item();
    Ok(ObjectiveOutput { loss, regularizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::Tensor2;
    use proptest::prelude::*;

    fn terms(g: &mut Graph, recon: f64, kl: f64, mu: Tensor2, log_var: Tensor2) -> BatchTerms {
        let z = g.leaf(mu.clone());
        BatchTerms {
            recon: g.leaf(Tensor2::scalar(recon)),
            kl: g.leaf(Tensor2::scalar(kl)),
            mu: g.leaf(mu),
            log_var: g.leaf(log_var),
            z,
        }
    }

    fn loss_value(cfg: ObjectiveConfig, recon: f64, kl: f64, mu: Tensor2, step: usize) -> (f64, f64) {
        let mut g = Graph::new();
        let lv = Tensor2::zeros(mu.rows(), mu.cols());
        let t = terms(&mut g, recon, kl, mu, lv);
        let out = objective_loss(&cfg, &mut g, &t, step, None).unwrap();
        (g.value(out.loss).item(), out.regularizer)
    }

    fn batch() -> Tensor2 {
        Tensor2::from_rows(&[vec![0.5, -1.0], vec![1.5, 0.2], vec![-0.3, 0.9]]).unwrap()
    }

    #[test]
    fn beta_one_is_plain_elbo() {
        let (loss, reg) = loss_value(ObjectiveConfig::BetaVae { beta: 1.0 }, 12.5, 3.25, batch(), 0);
        assert_eq!(loss, 15.75);
        assert_eq!(reg, 0.0);
    }

    #[test]
    fn annealed_regularizer_vanishes_at_capacity() {
        let cfg = ObjectiveConfig::AnnealedVae { gamma: 1000.0, c_max: 25.0, anneal_steps: 100 };
        let (loss, _) = loss_value(cfg, 10.0, 25.0, batch(), 100);
        assert_eq!(loss, 10.0);
        let (loss, _) = loss_value(cfg, 10.0, 25.0, batch(), 250);
        assert_eq!(loss, 10.0);
    }

    #[test]
    fn capacity_schedule_is_piecewise_linear() {
        let cfg = ObjectiveConfig::AnnealedVae { gamma: 1.0, c_max: 8.0, anneal_steps: 100 };
        let got: Vec<f64> = [0, 50, 100, 200].iter().map(|&s| cfg.capacity(s)).collect();
        assert_eq!(got, vec![0.0, 4.0, 8.0, 8.0]);
        // regularizer is zero exactly when KL equals C(step)
        for (step, c) in [(0, 0.0), (50, 4.0), (100, 8.0)] {
            let (loss, _) = loss_value(cfg, 1.0, c, batch(), step);
            assert_eq!(loss, 1.0);
            let (loss, _) = loss_value(cfg, 1.0, c + 0.5, batch(), step);
            assert!(loss > 1.0);
        }
    }

    #[test]
    fn dip_penalty_zero_at_identity_covariance() {
        // rows (±1, 0), (0, ±1): zero mean, biased covariance I
        let mu = Tensor2::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]])
            .unwrap()
            .map(|v| v * 2f64.sqrt());
        let (loss, reg) = loss_value(ObjectiveConfig::DipVaeI { lambda_od: 10.0, lambda_d: 100.0 }, 2.0, 1.0, mu, 0);
        assert_eq!(reg, 0.0);
        assert_eq!(loss, 3.0);
    }

    #[test]
    fn beta_tcvae_with_unit_beta_adds_nothing() {
        let (loss, reg) = loss_value(ObjectiveConfig::BetaTcvae { beta: 1.0 }, 4.0, 2.0, batch(), 0);
        assert_eq!(reg, 0.0);
        assert_eq!(loss, 6.0);
    }

    #[test]
    fn factor_vae_requires_discriminator() {
        let mut g = Graph::new();
        let t = terms(&mut g, 1.0, 1.0, batch(), Tensor2::zeros(3, 2));
        let err = objective_loss(&ObjectiveConfig::FactorVae { gamma_tc: 10.0 }, &mut g, &t, 0, None);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn config_rejects_foreign_fields() {
        let ok: ObjectiveConfig = serde_json::from_str(r#"{"method":"beta_vae","beta":4}"#).unwrap();
        assert_eq!(ok, ObjectiveConfig::BetaVae { beta: 4.0 });
        let dip: ObjectiveConfig =
            serde_json::from_str(r#"{"method":"dip_vae_ii","lambda_od":2,"lambda_d":2}"#).unwrap();
        assert_eq!(dip.method(), Method::DipVaeII);
        assert!(serde_json::from_str::<ObjectiveConfig>(r#"{"method":"beta_vae","gamma_tc":4}"#).is_err());
        assert!(serde_json::from_str::<ObjectiveConfig>(r#"{"method":"beta_vae","beta":4,"c_max":1}"#).is_err());
        assert!(ObjectiveConfig::BetaVae { beta: -1.0 }.validate().is_err());
        assert!(ObjectiveConfig::BetaVae { beta: f64::NAN }.validate().is_err());
    }

    #[test]
    fn sweep_configs() {
        let c = Method::AnnealedVae.config_for_strength(25.0, 5000);
        assert_eq!(c, ObjectiveConfig::AnnealedVae { gamma: 1000.0, c_max: 25.0, anneal_steps: 4500 });
        assert_eq!(
            Method::DipVaeI.config_for_strength(2.0, 10),
            ObjectiveConfig::DipVaeI { lambda_od: 2.0, lambda_d: 20.0 }
        );
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
            assert_eq!(m.config_for_strength(3.0, 10).strength(), 3.0);
        }
    }

    proptest! {
        #[test]
        fn beta_vae_loss_monotone_in_beta(
            recon in 0.0f64..100.0,
            kl in 1e-3f64..50.0,
            b1 in 0.0f64..20.0,
            db in 0.0f64..20.0,
        ) {
            let (lo, _) = loss_value(ObjectiveConfig::BetaVae { beta: b1 }, recon, kl, batch(), 0);
            let (hi, _) = loss_value(ObjectiveConfig::BetaVae { beta: b1 + db }, recon, kl, batch(), 0);
            prop_assert!(hi >= lo);
        }

        #[test]
        fn dip_penalty_ignores_latent_order(
            data in proptest::collection::vec(-3.0f64..3.0, 12),
            lv in proptest::collection::vec(-2.0f64..2.0, 12),
        ) {
            let mu = Tensor2::new(4, 3, data).unwrap();
            let lv = Tensor2::new(4, 3, lv).unwrap();
            let perm = [2usize, 0, 1];
            let permute = |t: &Tensor2| {
                let mut out = Tensor2::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    for (c, &p) in perm.iter().enumerate() {
                        out.set(r, c, t.get(r, p));
                    }
                }
                out
            };
            for second in [false, true] {
                let pen = |mu: &Tensor2, lv: &Tensor2| {
                    let cov = crate::grad::latent_covariance(mu, second.then_some(lv));
                    crate::grad::cov_penalty_value(&cov, 3.0, 7.0)
                };
                let a = pen(&mu, &lv);
                let b = pen(&permute(&mu), &permute(&lv));
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
