use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plots::{export_plots, PlotKind};
use super::stats::{anova_variance_explained, Grouping};
use super::store::RecordStore;
use super::transfer::{transfer_vs_random, TransferResult};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisOptions {
    pub transfer_trials: usize,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { transfer_trials: 10_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub world: String,
    pub metric: String,
    pub grouping: Grouping,
    pub fraction: f64,
    pub degenerate: bool,
    pub groups: usize,
    pub n: usize,
}

/// Transfer between an ordered pair of worlds for one metric, or why it
/// could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub source: String,
    pub target: String,
    pub metric: String,
    pub result: Option<TransferResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub records: usize,
    pub anova: Vec<AnovaRow>,
    pub transfer: Vec<TransferRow>,
    pub files: Vec<PathBuf>,
}

fn anova_tsv(rows: &[AnovaRow]) -> String {
    let mut out = String::from("world\tmetric\tgrouping\tfraction\tdegenerate\tgroups\tn\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.world,
            r.metric,
            r.grouping.name(),
            r.fraction,
            r.degenerate,
            r.groups,
            r.n
        );
    }
    out
}

/// ANOVA table, rank-correlation matrices, transfer results and all plots.
/// Transfer is attempted for every ordered pair of worlds (including a
/// world with itself) and every metric; coverage gaps are reported in the
/// summary rather than aborting.
pub fn analyze(store: &RecordStore, out_dir: &Path, options: &AnalysisOptions) -> Result<AnalysisSummary> {
    if store.is_empty() {
        return Err(Error::Validation("score store is empty".into()));
    }
    fs::create_dir_all(out_dir)?;
    let worlds: Vec<String> = store.worlds().into_iter().map(String::from).collect();
    let metrics: Vec<String> = store.metrics().into_iter().map(String::from).collect();
    let mut anova = Vec::new();
    for w in &worlds {
        for m in &metrics {
            for g in Grouping::ALL {
                if let Ok(a) = anova_variance_explained(store, Some(w), m, g) {
                    anova.push(AnovaRow {
                        world: w.clone(),
                        metric: m.clone(),
                        grouping: g,
                        fraction: a.fraction,
                        degenerate: a.degenerate,
                        groups: a.groups,
                        n: a.n,
                    });
                }
            }
        }
    }
    let mut transfer = Vec::new();
    for source in &worlds {
        for target in &worlds {
            for m in &metrics {
                let r = transfer_vs_random(store, source, target, m, options.transfer_trials, options.seed);
                let (result, error) = match r {
                    Ok(t) => (Some(t), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                transfer.push(TransferRow {
                    source: source.clone(),
                    target: target.clone(),
                    metric: m.clone(),
                    result,
                    error,
                });
            }
        }
    }
    let mut files = Vec::new();
    let p = out_dir.join("anova.tsv");
    fs::write(&p, anova_tsv(&anova))?;
    files.push(p);
    let p = out_dir.join("transfer.json");
    fs::write(&p, serde_json::to_string_pretty(&transfer)? + "\n")?;
    files.push(p);
    for kind in PlotKind::ALL {
        files.extend(export_plots(store, kind, out_dir)?);
    }
    let summary = AnalysisSummary { records: store.len(), anova, transfer, files };
    fs::write(out_dir.join("analysis.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
