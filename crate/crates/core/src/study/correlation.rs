use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::spearman;
use super::store::RecordStore;
use super::RECORD_METRICS;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum CorrelationAxis {
    /// One metric compared across worlds; models are matched by
    /// `(method, hyperparameter, seed)`.
    AcrossWorlds { metric: String },
    /// All scores compared against each other within one world; models are
    /// matched by run id.
    Metrics { world: String },
}

impl CorrelationAxis {
    pub fn label(&self) -> String {
        match self {
            CorrelationAxis::AcrossWorlds { metric } => format!("worlds_{metric}"),
            CorrelationAxis::Metrics { world } => format!("metrics_{world}"),
        }
    }
}

/// Square matrix with the same labels on both axes. `None` marks a pair
/// with too few matched models or a constant score list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub axis: CorrelationAxis,
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl LabeledMatrix {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label");
        for l in &self.labels {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            out.push_str(l);
            for v in row {
                out.push('\t');
                match v {
                    Some(x) => out.push_str(&x.to_string()),
                    None => out.push_str("NA"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// `label → model key → score`.
type Table = BTreeMap<String, BTreeMap<String, f64>>;

fn table(store: &RecordStore, axis: &CorrelationAxis) -> Table {
    let mut t: Table = BTreeMap::new();
    for r in store.records().iter().filter(|r| r.is_ok()) {
        match axis {
            CorrelationAxis::AcrossWorlds { metric } if &r.metric == metric => {
                let key = format!("{}/{}={}/{}", r.method, r.hparam_name, r.hparam_value, r.seed);
                t.entry(r.world.clone()).or_default().insert(key, r.value);
            }
            CorrelationAxis::Metrics { world } if &r.world == world => {
                t.entry(r.metric.clone()).or_default().insert(r.run_id.clone(), r.value);
            }
            _ => {}
        }
    }
    t
}

/// Known score names first in record order, then any others sorted.
fn ordered_labels(t: &Table, axis: &CorrelationAxis) -> Vec<String> {
    match axis {
        CorrelationAxis::AcrossWorlds { .. } => t.keys().cloned().collect(),
        CorrelationAxis::Metrics { .. } => {
            let mut labels: Vec<String> =
                RECORD_METRICS.iter().filter(|m| t.contains_key(**m)).map(|m| m.to_string()).collect();
            labels.extend(t.keys().filter(|k| !RECORD_METRICS.contains(&k.as_str())).cloned());
            labels
        }
    }
}

/// Pairwise Spearman correlation over matched models.
pub fn rank_correlation_matrix(store: &RecordStore, axis: &CorrelationAxis) -> Result<LabeledMatrix> {
    let t = table(store, axis);
    let labels = ordered_labels(&t, axis);
    let values = labels
        .iter()
        .map(|a| {
            labels
                .iter()
                .map(|b| {
                    let (ta, tb) = (&t[a], &t[b]);
                    let (xs, ys): (Vec<f64>, Vec<f64>) =
                        ta.iter().filter_map(|(k, &x)| tb.get(k).map(|&y| (x, y))).unzip();
                    spearman(&xs, &ys).ok()
                })
                .collect()
        })
        .collect();
    Ok(LabeledMatrix { axis: axis.clone(), labels, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::store::{ScoreRecord, Status};
    use rand::Rng;

    fn rec(world: &str, seed: u64, metric: &str, value: f64) -> ScoreRecord {
        ScoreRecord {
            run_id: format!("{world}/{seed}"),
            world: world.into(),
            method: "beta_vae".into(),
            hparam_name: "beta".into(),
            hparam_value: 1.0,
            seed,
            metric: metric.into(),
            value,
            status: Status::Ok,
        }
    }

    #[test]
    fn self_correlation_has_unit_diagonal() {
        let mut st = RecordStore::new();
        let recs = (0..10)
            .flat_map(|s| {
                let v = ((s * 7) % 10) as f64;
                vec![rec("a", s, "mig", v), rec("a", s, "dci", -v), rec("b", s, "mig", v * v)]
            })
            .collect();
        st.append(recs, false).unwrap();
        let m = rank_correlation_matrix(&st, &CorrelationAxis::AcrossWorlds { metric: "mig".into() }).unwrap();
        assert_eq!(m.labels, vec!["a", "b"]);
        assert_eq!(m.values, vec![vec![Some(1.0), Some(1.0)], vec![Some(1.0), Some(1.0)]]);
        let w = rank_correlation_matrix(&st, &CorrelationAxis::Metrics { world: "a".into() }).unwrap();
        assert_eq!(w.labels, vec!["mig", "dci"]);
        assert_eq!(w.values[0][1], Some(-1.0));
        assert!(w.to_tsv().starts_with("label\tmig\tdci\nmig\t1\t-1\n"));
    }

    #[test]
    fn constant_scores_are_missing_cells() {
        let mut st = RecordStore::new();
        st.append((0..5).map(|s| rec("a", s, "mig", 0.5)).collect(), false).unwrap();
        let m = rank_correlation_matrix(&st, &CorrelationAxis::Metrics { world: "a".into() }).unwrap();
        assert_eq!(m.values, vec![vec![None]]);
        assert!(m.to_tsv().contains("NA"));
    }

    /// Under independence ρ has standard deviation 1/√29 ≈ 0.19 at n = 30,
    /// so |ρ| ≥ 0.5 should occur in under 1% of trials.
    #[test]
    fn independent_scores_are_weakly_correlated() {
        let mut r = crate::rng::stream(5, 0);
        let mut big = 0;
        for _ in 0..200 {
            let xs: Vec<f64> = (0..30).map(|_| r.random()).collect();
            let ys: Vec<f64> = (0..30).map(|_| r.random()).collect();
            big += (spearman(&xs, &ys).unwrap().abs() >= 0.5) as usize;
        }
        assert!(big < 10, "{big} of 200 trials had |rho| >= 0.5");
    }
}
