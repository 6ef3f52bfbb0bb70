//! Disentanglement metrics and unsupervised training scores.
//!
//! Metrics that only need `(codes, factors)` pairs take a
//! [`RepresentationMatrix`] and a [`FactorMatrix`]. The BetaVAE and FactorVAE
//! scores sample their own batches and therefore take a world and a
//! [`Representation`], i.e. anything that maps factor rows to codes.
//!
//! Ties in argmax or top-two selections are broken by the lowest index.

mod classifier;
mod dci;
mod forest;
mod mi;
mod representation;
mod sap;
mod unsupervised;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use classifier::{beta_vae_score, factor_vae_score, fit_logistic, LogisticModel};
pub use dci::{dci_disentanglement, dci_from_importance, DciComponents, ImportanceMatrix};
pub use forest::{ForestConfig, RandomForest};
pub use mi::{discretize, discretize_and_mi, entropy, mig, mig_from_mi, modularity, modularity_from_mi, MIMatrix};
pub use representation::{
    EncoderRepresentation, ExactFactors, FnRepresentation, GridCache, Representation, TableRepresentation,
};
pub use sap::{r2_matrix, sap_from_matrix, sap_score};
pub use unsupervised::{gaussian_tc, unsupervised_scores, UnsupervisedScores, GAUSSIAN_TC_RIDGE};

use crate::rng::derive_seed;
use crate::vae::RepresentationMatrix;
use crate::worlds::{FactorMatrix, FactorWorld};
use crate::{Error, Result};

/// Metric names in canonical order.
pub const METRIC_NAMES: [&str; 6] = ["beta_vae", "factor_vae", "mig", "modularity", "dci", "sap"];

/// Estimator settings shared by all metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Quantile bins per code dimension for MI-based metrics.
    pub bins: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Pairs (BetaVAE) or samples (FactorVAE) per training point or vote.
    pub batch_size: usize,
    /// Samples used for the FactorVAE global variance.
    pub n_variance: usize,
    /// FactorVAE pruning threshold on the std-normalized global variance of a
    /// code dim.
    pub prune_threshold: f64,
    pub logistic_iterations: usize,
    pub logistic_lr: f64,
    pub forest: ForestConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bins: 20,
            n_train: 10_000,
            n_test: 5_000,
            batch_size: 64,
            n_variance: 10_000,
            prune_threshold: 0.05,
            logistic_iterations: 500,
            logistic_lr: 0.05,
            forest: ForestConfig::default(),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config(format!("bins must be at least 2, got {}", self.bins)));
        }
        if self.n_train == 0 || self.n_test == 0 || self.batch_size < 2 || self.n_variance < 2 {
            return Err(Error::Config("metric sample sizes must be positive (batch_size >= 2)".into()));
        }
        if !(self.prune_threshold >= 0.0) || !(self.logistic_lr > 0.0) {
            return Err(Error::Config("prune_threshold must be >= 0 and logistic_lr > 0".into()));
        }
        self.forest.validate()
    }
}

/// Outcome of one metric evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    /// In `[0, 1]`.
    pub score: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Named scalars such as DCI completeness or the collapsed flag (0/1).
    pub extras: BTreeMap<String, f64>,
    /// Named row-major matrices such as the MI or importance matrix.
    pub matrices: BTreeMap<String, Vec<Vec<f64>>>,
}

impl MetricReport {
    pub fn new(metric: &str, score: f64, seed: u64, n_train: usize, n_test: usize) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::Numeric(format!("{metric} score is {score}")));
        }
        // scores are ratios of non-negative terms; clamp rounding excursions
        let score = score.clamp(0.0, 1.0);
        Ok(Self {
            metric: metric.to_string(),
            score,
            seed,
            n_train,
            n_test,
            extras: BTreeMap::new(),
            matrices: BTreeMap::new(),
        })
    }

    pub fn with_extra(mut self, name: &str, value: f64) -> Self {
        self.extras.insert(name.to_string(), value);
        self
    }

    pub fn with_matrix(mut self, name: &str, m: Vec<Vec<f64>>) -> Self {
        self.matrices.insert(name.to_string(), m);
        self
    }

    pub fn flag(&self, name: &str) -> bool {
        self.extras.get(name).is_some_and(|&v| v != 0.0)
    }
}

pub(crate) fn check_rows(reps: &RepresentationMatrix, factors: &FactorMatrix) -> Result<()> {
    if reps.rows() != factors.rows() {
        return Err(Error::Shape(format!("representation has {} rows, factors have {}", reps.rows(), factors.rows())));
    }
    Ok(())
}

/// Order-independent sum: sorts before adding so permuted inputs give
/// bit-identical results.
pub(crate) fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Largest and second-largest values (the second is 0 for one entry).
pub(crate) fn top_two(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    (sorted.first().copied().unwrap_or(0.0), sorted.get(1).copied().unwrap_or(0.0))
}

/// Evaluates all six metrics. Train and test factor samples are drawn once
/// and shared by the `(codes, factors)` metrics; every metric gets its own
/// derived seed.
pub fn evaluate_all(
    world: &FactorWorld,
    rep: &dyn Representation,
    config: &MetricsConfig,
    seed: u64,
) -> Result<Vec<MetricReport>> {
    config.validate()?;
    let train_f = world.sample_factors(config.n_train, derive_seed(seed, "metrics/train"));
    let test_f = world.sample_factors(config.n_test, derive_seed(seed, "metrics/test"));
    let train_r = rep.represent(&train_f)?;
    let test_r = rep.represent(&test_f)?;
    Ok(vec![
        beta_vae_score(world, rep, config, derive_seed(seed, "beta_vae"))?,
        factor_vae_score(world, rep, config, derive_seed(seed, "factor_vae"))?,
        mig(&train_r, &train_f, config.bins)?,
        modularity(&train_r, &train_f, config.bins)?,
        dci_disentanglement(&train_r, &train_f, &test_r, &test_f, &config.forest, derive_seed(seed, "dci"))?,
        sap_score(&train_r, &train_f, &test_r, &test_f)?,
    ])
}
