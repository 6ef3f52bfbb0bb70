use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::store::{RecordStore, ScoreRecord};
use crate::{Error, Result};

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let mean = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Validation(format!("spearman needs equal lengths, got {} and {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Validation(format!("spearman needs at least 3 pairs, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Validation("spearman inputs must be finite".into()));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("spearman of a constant sequence".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One-way ANOVA summary: `fraction = SS_between / SS_total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anova {
    pub fraction: f64,
    /// Set when there is a single group or no variance at all; the fraction
    /// is then 0.
    pub degenerate: bool,
    pub groups: usize,
    pub n: usize,
    pub ss_between: f64,
    pub ss_total: f64,
}

/// Empty groups are ignored.
pub fn anova_from_groups(groups: &[Vec<f64>]) -> Result<Anova> {
    let groups: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    let n: usize = groups.iter().map(|g| g.len()).sum();
    if n == 0 {
        return Err(Error::Undefined("ANOVA of no observations".into()));
    }
    if groups.iter().flat_map(|g| g.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("ANOVA inputs must be finite".into()));
    }
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let ss_total: f64 = groups.iter().flat_map(|g| g.iter()).map(|v| (v - grand).powi(2)).sum();
    let ss_between: f64 = groups
        .iter()
        .map(|g| {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            g.len() as f64 * (m - grand).powi(2)
        })
        .sum();
    let degenerate = groups.len() < 2 || ss_total <= 0.0;
    let fraction = if degenerate { 0.0 } else { (ss_between / ss_total).clamp(0.0, 1.0) };
    Ok(Anova { fraction, degenerate, groups: groups.len(), n, ss_between, ss_total })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Method,
    /// One group per `(method, hyperparameter value)` cell.
    Hyperparameter,
    Seed,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::Method, Grouping::Hyperparameter, Grouping::Seed];

    pub fn name(&self) -> &'static str {
        match self {
            Grouping::Method => "method",
            Grouping::Hyperparameter => "hyperparameter",
            Grouping::Seed => "seed",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }

    pub(crate) fn key(&self, r: &ScoreRecord) -> String {
        match self {
            Grouping::Method => r.method.clone(),
            Grouping::Hyperparameter => {
                format!("{}/{}={}", r.method, r.hparam_name, r.hparam_value)
            }
            Grouping::Seed => r.seed.to_string(),
        }
    }
}

/// Share of the variance of `metric` explained by `grouping`, over ok
/// records (of one world when given).
pub fn anova_variance_explained(
    store: &RecordStore,
    world: Option<&str>,
    metric: &str,
    grouping: Grouping,
) -> Result<Anova> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in store.ok_values(world, metric) {
        groups.entry(grouping.key(r)).or_default().push(r.value);
    }
    anova_from_groups(&groups.into_values().collect::<Vec<_>>())
}

/// Nearest-rank quantile of sorted data: the value at 1-based rank
/// `max(1, ⌈q·n⌉)`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub n: usize,
    pub min: f64,
    pub q10: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
}

/// `None` for an empty sample.
pub fn summarize(values: &[f64]) -> Option<QuantileSummary> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Some(QuantileSummary {
        n: s.len(),
        min: s[0],
        q10: nearest_rank(&s, 0.10),
        q25: nearest_rank(&s, 0.25),
        median: nearest_rank(&s, 0.5),
        q75: nearest_rank(&s, 0.75),
        q90: nearest_rank(&s, 0.90),
        max: s[s.len() - 1],
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    summarize(values).map(|s| s.median)
}
