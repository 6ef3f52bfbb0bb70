//! Sweeps, the score store and the analyses run on it.
//!
//! A study config names worlds, methods with their strength sweeps, seeds
//! and a step count. Every combination is one cell: it trains a model,
//! scores it with the six metrics plus the unsupervised scores and appends
//! ten records to the store. Cells run on a worker pool; results pass
//! through a single writer, and since every cell is seeded on its own the
//! store is the same whatever the scheduling.

mod analyze;
mod correlation;
mod plots;
mod stats;
mod store;
mod transfer;

use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use analyze::{analyze, AnalysisOptions, AnalysisSummary, AnovaRow, TransferRow};
pub use correlation::{rank_correlation_matrix, CorrelationAxis, LabeledMatrix};
pub use plots::{all_correlation_matrices, export_plots, score_distribution, score_vs_strength, PlotKind};
pub use stats::{
    anova_from_groups, anova_variance_explained, average_ranks, median, nearest_rank, spearman, summarize, Anova,
    Grouping, QuantileSummary,
};
pub use store::{RecordStore, ScoreRecord, Status, HEADER};
pub use transfer::{method_grids, transfer_vs_random, MethodGrid, MethodTransfer, TransferResult};

use crate::metrics::{
    dci_disentanglement, evaluate_all, mig, modularity, sap_score, unsupervised_scores, EncoderRepresentation,
    GridCache, MetricsConfig, Representation, TableRepresentation,
};
use crate::rng::{self, derive_seed};
use crate::vae::{train_with, Checkpoint, Method, ObjectiveConfig, RepresentationMatrix, TrainOptions};
use crate::worlds::{FactorMatrix, FactorWorld, WorldConfig, DEFAULT_GRID_CAP};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Metric names written per run, in order.
pub const RECORD_METRICS: [&str; 10] =
    ["beta_vae", "factor_vae", "mig", "modularity", "dci", "sap", "recon", "elbo", "kl", "gaussian_tc"];

pub const WORKERS_ENV: &str = "UNTANGLE_WORKERS";

fn default_unsupervised_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSweep {
    pub method: Method,
    /// Defaults to the method's six-point sweep.
    #[serde(default)]
    pub strengths: Option<Vec<f64>>,
}

impl MethodSweep {
    pub fn strengths(&self) -> Vec<f64> {
        self.strengths.clone().unwrap_or_else(|| self.method.default_sweep().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub schema_version: u32,
    pub worlds: Vec<WorldConfig>,
    pub methods: Vec<MethodSweep>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default = "default_unsupervised_samples")]
    pub unsupervised_samples: usize,
    /// Worker threads; the command-line flag and `UNTANGLE_WORKERS` take
    /// precedence.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.worlds.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("worlds, methods and seeds must all be non-empty".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.unsupervised_samples < 1000 {
            return Err(Error::Config("unsupervised_samples must be at least 1000".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        for w in &self.worlds {
            FactorWorld::new(w.clone())?;
        }
        for m in &self.methods {
            let s = m.strengths();
            if s.is_empty() {
                return Err(Error::Config(format!("{}: empty strength list", m.method)));
            }
            for v in &s {
                m.method.config_for_strength(*v, self.steps).validate()?;
            }
        }
        let cells = self.cells();
        let mut ids: Vec<&str> = cells.iter().map(|c| c.run_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("grid contains run {} twice", w[0])));
        }
        self.train.validate()?;
        self.metrics.validate()
    }

    /// Cells in world, method, strength, seed order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for w in &self.worlds {
            for m in &self.methods {
                for s in m.strengths() {
                    for &seed in &self.seeds {
                        out.push(Cell::new(w.clone(), m.method.config_for_strength(s, self.steps), seed));
                    }
                }
            }
        }
        out
    }
}

/// `<world>__<method>__<hparam>=<value>__seed<seed>`.
pub fn run_id(world: &WorldConfig, objective: &ObjectiveConfig, seed: u64) -> String {
    let m = objective.method();
    format!("{}__{}__{}={}__seed{}", world.label(), m.name(), m.strength_name(), objective.strength(), seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub run_id: String,
    pub world: WorldConfig,
    pub objective: ObjectiveConfig,
    pub seed: u64,
}

impl Cell {
    pub fn new(world: WorldConfig, objective: ObjectiveConfig, seed: u64) -> Self {
        Self { run_id: run_id(&world, &objective, seed), world, objective, seed }
    }

    fn record(&self, metric: &str, value: f64, status: Status) -> ScoreRecord {
        let m = self.objective.method();
        ScoreRecord {
            run_id: self.run_id.clone(),
            world: self.world.label(),
            method: m.name().into(),
            hparam_name: m.strength_name().into(),
            hparam_value: self.objective.strength(),
            seed: self.seed,
            metric: metric.into(),
            value,
            status,
        }
    }

    /// Ten ok records, or ten failed ones if scoring went wrong.
    pub fn records(&self, scores: Result<Vec<(String, f64)>>) -> Vec<ScoreRecord> {
        match scores {
            Ok(s) => s.into_iter().map(|(m, v)| self.record(&m, v, Status::Ok)).collect(),
            Err(e) => {
                log::warn!("run {} failed: {e}", self.run_id);
                RECORD_METRICS.iter().map(|m| self.record(m, f64::NAN, Status::Failed)).collect()
            }
        }
    }
}

/// Scores a checkpoint with all six metrics and the unsupervised scores,
/// named as in [`RECORD_METRICS`]. The encoder is run once over the whole
/// factor grid when the grid is small enough; otherwise on demand.
pub fn score_checkpoint(
    world: &FactorWorld,
    checkpoint: &Checkpoint,
    metrics: &MetricsConfig,
    unsupervised_samples: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    let encoder = EncoderRepresentation { world, checkpoint };
    let cache;
    let rep: &dyn Representation = if world.space().grid_size() <= DEFAULT_GRID_CAP {
        cache = GridCache::build(world, &encoder)?;
        &cache
    } else {
        &encoder
    };
    let reports = evaluate_all(world, rep, metrics, derive_seed(seed, "metrics"))?;
    let u = unsupervised_scores(checkpoint, world, unsupervised_samples, derive_seed(seed, "unsupervised"))?;
    let mut out: Vec<(String, f64)> = reports.into_iter().map(|r| (r.metric, r.score)).collect();
    out.extend([
        ("recon".to_string(), u.recon),
        ("elbo".to_string(), u.elbo),
        ("kl".to_string(), u.kl),
        ("gaussian_tc".to_string(), u.gaussian_tc),
    ]);
    debug_assert!(out.iter().map(|(m, _)| m.as_str()).eq(RECORD_METRICS));
    Ok(out)
}

/// Scores codes computed elsewhere. When `factors` covers the whole grid
/// of `world`, all six metrics are computed through a lookup table;
/// otherwise only MIG, Modularity, DCI and SAP, on a seeded two-thirds /
/// one-third train/test split of the given rows.
pub fn score_precomputed(
    world: &FactorWorld,
    factors: &FactorMatrix,
    codes: &RepresentationMatrix,
    metrics: &MetricsConfig,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    metrics.validate()?;
    let table = TableRepresentation::new(factors, codes)?;
    if table.covers(world) {
        let reports = evaluate_all(world, &table, metrics, derive_seed(seed, "metrics"))?;
        return Ok(reports.into_iter().map(|r| (r.metric, r.score)).collect());
    }
    let mut order: Vec<usize> = (0..factors.rows()).collect();
    order.shuffle(&mut rng::stream(derive_seed(seed, "split"), rng::streams::PERMUTATION));
    let cut = factors.rows() * 2 / 3;
    let (tr, te) = order.split_at(cut);
    let (ftr, fte) = (factors.select_rows(tr), factors.select_rows(te));
    let (ctr, cte) = (codes.select_rows(tr), codes.select_rows(te));
    let dci_seed = derive_seed(derive_seed(seed, "metrics"), "dci");
    Ok(vec![
        ("mig".to_string(), mig(&ctr, &ftr, metrics.bins)?.score),
        ("modularity".to_string(), modularity(&ctr, &ftr, metrics.bins)?.score),
        ("dci".to_string(), dci_disentanglement(&ctr, &ftr, &cte, &fte, &metrics.forest, dci_seed)?.score),
        ("sap".to_string(), sap_score(&ctr, &ftr, &cte, &fte)?.score),
    ])
}

/// Trains and scores one cell. Errors become failed records.
pub fn run_cell(cell: &Cell, config: &StudyConfig, checkpoint_dir: Option<&Path>) -> Vec<ScoreRecord> {
    let scores = (|| {
        let world = FactorWorld::new(cell.world.clone())?;
        let ckpt = train_with(&world, &cell.objective, config.steps, cell.seed, &config.train)?;
        if let Some(dir) = checkpoint_dir {
            ckpt.save(&dir.join(format!("{}.ckpt", cell.run_id)))?;
        }
        score_checkpoint(&world, &ckpt, &config.metrics, config.unsupervised_samples, cell.seed)
    })();
    cell.records(scores)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub workers: usize,
    /// Replace runs that are already in the store.
    pub force: bool,
    pub checkpoint_dir: Option<PathBuf>,
    /// Rewritten after every finished cell.
    pub store_path: Option<PathBuf>,
}

/// Worker count: explicit value, then the environment variable, then the
/// config, then the number of available cores.
pub fn resolve_workers(flag: Option<usize>, env: Option<&str>, config: Option<usize>) -> Result<usize> {
    let from_env = match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) => Some(
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got '{s}'")))?,
        ),
        None => None,
    };
    let n = flag.or(from_env).or(config).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    Ok(n)
}

/// Runs every cell of the grid and appends the results to `store`. Runs
/// already present are rejected up front unless `options.force` is set.
pub fn run_study(config: &StudyConfig, store: &mut RecordStore, options: &RunOptions) -> Result<()> {
    config.validate()?;
    let cells = config.cells();
    let existing = store.run_ids();
    let clashes: Vec<String> =
        cells.iter().filter(|c| existing.contains(c.run_id.as_str())).map(|c| c.run_id.clone()).collect();
    if !clashes.is_empty() {
        if !options.force {
            return Err(Error::Duplicate(clashes));
        }
        store.remove_runs(&clashes);
    }
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let total = cells.len();
    log::info!("study: {total} runs on {} workers", options.workers.max(1));
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| -> Result<()> {
        let cells = &cells;
        let ckpt_dir = options.checkpoint_dir.as_deref();
        scope.spawn(move || {
            pool.install(|| {
                cells.par_iter().for_each_with(tx, |tx, cell| {
                    let _ = tx.send(run_cell(cell, config, ckpt_dir));
                })
            })
        });
        for (done, records) in rx.iter().enumerate() {
            let id = records.first().map(|r| r.run_id.clone()).unwrap_or_default();
            store.append(records, false)?;
            if let Some(p) = &options.store_path {
                store.save(p)?;
            }
            log::info!("study: finished {id} ({}/{total})", done + 1);
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests;
