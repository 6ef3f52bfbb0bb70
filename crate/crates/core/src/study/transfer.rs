use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stats::median;
use super::store::RecordStore;
use crate::rng::{self, streams};
use crate::{Error, Result};

/// Per-method score grid of one world: `scores[h][s]` for the sorted
/// hyperparameter values and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodGrid {
    pub method: String,
    pub hparam_name: String,
    pub hparams: Vec<f64>,
    pub seeds: Vec<u64>,
    pub source: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTransfer {
    pub method: String,
    pub hparam_name: String,
    /// Hyperparameter with the best median score on the source world.
    pub chosen: f64,
    pub wins: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub source: String,
    pub target: String,
    pub metric: String,
    pub seed: u64,
    /// Share of (method, trial) pairs where the transferred choice strictly
    /// beat the random one.
    pub fraction: f64,
    pub methods: Vec<MethodTransfer>,
}

type Cell = (String, u64, u64);

fn cell_values(store: &RecordStore, world: &str, metric: &str) -> BTreeMap<(String, u64, u64), (String, f64)> {
    store
        .ok_values(Some(world), metric)
        .map(|r| ((r.method.clone(), r.hparam_value.to_bits(), r.seed), (r.hparam_name.clone(), r.value)))
        .collect()
}

/// Builds the shared source/target grid per method. Every
/// `(method, hyperparameter, seed)` seen in either world must have an ok
/// score in both.
pub fn method_grids(store: &RecordStore, source: &str, target: &str, metric: &str) -> Result<Vec<MethodGrid>> {
    let src = cell_values(store, source, metric);
    let tgt = cell_values(store, target, metric);
    let keys: BTreeSet<&Cell> = src.keys().chain(tgt.keys()).collect();
    if keys.is_empty() {
        return Err(Error::Coverage(vec![format!("no ok '{metric}' scores for {source} and {target}")]));
    }
    let mut by_method: BTreeMap<&str, (BTreeSet<u64>, BTreeSet<u64>)> = BTreeMap::new();
    for (m, h, s) in &keys {
        let e = by_method.entry(m.as_str()).or_default();
        e.0.insert(*h);
        e.1.insert(*s);
    }
    let mut missing = Vec::new();
    let mut grids = Vec::new();
    for (method, (hs, ss)) in by_method {
        let mut hparams: Vec<f64> = hs.iter().map(|&b| f64::from_bits(b)).collect();
        hparams.sort_by(f64::total_cmp);
        let seeds: Vec<u64> = ss.into_iter().collect();
        let mut name = String::new();
        let mut grid = |world: &str, values: &BTreeMap<Cell, (String, f64)>| -> Vec<Vec<f64>> {
            hparams
                .iter()
                .map(|h| {
                    seeds
                        .iter()
                        .map(|&s| match values.get(&(method.to_string(), h.to_bits(), s)) {
                            Some((n, v)) => {
                                name.clone_from(n);
                                *v
                            }
                            None => {
                                missing.push(format!("{world}/{method}/{h}/seed {s}"));
                                f64::NAN
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let (s, t) = (grid(source, &src), grid(target, &tgt));
        grids.push(MethodGrid { method: method.to_string(), hparam_name: name, hparams, seeds, source: s, target: t });
    }
    if !missing.is_empty() {
        return Err(Error::Coverage(missing));
    }
    Ok(grids)
}

impl MethodGrid {
    /// Index of the hyperparameter with the best source median; ties go to
    /// the smallest value.
    pub fn best_source_index(&self) -> usize {
        let medians: Vec<f64> = self.source.iter().map(|row| median(row).unwrap_or(f64::NEG_INFINITY)).collect();
        let mut best = 0;
        for (i, &m) in medians.iter().enumerate() {
            if m > medians[best] {
                best = i;
            }
        }
        best
    }
}

/// Per method and trial: the transferred model is a uniformly random target
/// seed under the hyperparameter with the best median source score; the
/// baseline is a uniformly random target `(hyperparameter, seed)` drawn with
/// replacement. Counts strict wins of the transferred model.
pub fn transfer_vs_random(
    store: &RecordStore,
    source: &str,
    target: &str,
    metric: &str,
    trials: usize,
    seed: u64,
) -> Result<TransferResult> {
    if trials == 0 {
        return Err(Error::Validation("transfer needs at least one trial".into()));
    }
    let grids = method_grids(store, source, target, metric)?;
    let mut r = rng::stream(seed, streams::EVAL);
    let mut methods = Vec::with_capacity(grids.len());
    for g in &grids {
        let best = g.best_source_index();
        let (nh, ns) = (g.hparams.len(), g.seeds.len());
        let mut wins = 0;
        for _ in 0..trials {
            let transferred = g.target[best][r.random_range(0..ns)];
            let baseline = g.target[r.random_range(0..nh)][r.random_range(0..ns)];
            wins += (transferred > baseline) as usize;
        }
        methods.push(MethodTransfer {
            method: g.method.clone(),
            hparam_name: g.hparam_name.clone(),
            chosen: g.hparams[best],
            wins,
            trials,
        });
    }
    let total_wins: usize = methods.iter().map(|m| m.wins).sum();
    Ok(TransferResult {
        source: source.into(),
        target: target.into(),
        metric: metric.into(),
        seed,
        fraction: total_wins as f64 / (trials * methods.len()) as f64,
        methods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::store::{ScoreRecord, Status};

    fn rec(world: &str, method: &str, h: f64, seed: u64, value: f64) -> ScoreRecord {
        ScoreRecord {
            run_id: format!("{world}/{method}/{h}/{seed}"),
            world: world.into(),
            method: method.into(),
            hparam_name: "beta".into(),
            hparam_value: h,
            seed,
            metric: "m".into(),
            value,
            status: Status::Ok,
        }
    }

    fn store(f: impl Fn(&str, usize, u64) -> f64) -> RecordStore {
        let mut recs = Vec::new();
        for world in ["src", "tgt"] {
            for (hi, h) in [1.0, 2.0, 4.0].into_iter().enumerate() {
                for s in 0..4 {
                    recs.push(rec(world, "beta_vae", h, s, f(world, hi, s)));
                }
            }
        }
        let mut st = RecordStore::new();
        st.append(recs, false).unwrap();
        st
    }

    /// Exact win probability by enumerating every (transfer seed, baseline
    /// hyperparameter, baseline seed) combination.
    fn exact(g: &MethodGrid) -> f64 {
        let best = g.best_source_index();
        let mut wins = 0usize;
        let mut total = 0usize;
        for a in &g.target[best] {
            for row in &g.target {
                for b in row {
                    wins += (a > b) as usize;
                    total += 1;
                }
            }
        }
        wins as f64 / total as f64
    }

    #[test]
    fn constant_target_never_wins() {
        let st = store(|w, h, _| if w == "src" { h as f64 } else { 0.5 });
        assert_eq!(transfer_vs_random(&st, "src", "tgt", "m", 2000, 1).unwrap().fraction, 0.0);
    }

    #[test]
    fn matches_enumeration() {
        let st = store(|w, h, s| {
            if w == "src" {
                (h * 3 + s as usize) as f64 % 5.0
            } else {
                ((h + 1) * (s as usize + 2)) as f64 % 7.0
            }
        });
        let grids = method_grids(&st, "src", "tgt", "m").unwrap();
        let res = transfer_vs_random(&st, "src", "tgt", "m", 10_000, 9).unwrap();
        assert!((res.fraction - exact(&grids[0])).abs() < 0.02, "{} vs {}", res.fraction, exact(&grids[0]));
    }

    #[test]
    fn identical_rankings_transfer_well() {
        let st = store(|_, h, _| h as f64);
        let res = transfer_vs_random(&st, "src", "tgt", "m", 5000, 3).unwrap();
        assert_eq!(res.methods[0].chosen, 4.0);
        assert!((res.fraction - 2.0 / 3.0).abs() < 0.03);
    }

    #[test]
    fn missing_cells_are_listed() {
        let mut st = store(|_, h, _| h as f64);
        st.remove_runs(&["tgt/beta_vae/2/3".to_string()]);
        match method_grids(&st, "src", "tgt", "m") {
            Err(Error::Coverage(gaps)) => {
                assert_eq!(gaps, vec!["tgt/beta_vae/2/seed 3".to_string()])
            }
            other => panic!("{other:?}"),
        }
    }
}
