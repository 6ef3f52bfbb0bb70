use super::{argmax, check_rows, stable_sum, top_two, MetricReport};
use crate::vae::RepresentationMatrix;
use crate::worlds::FactorMatrix;
use crate::{Error, Result};

/// Pairwise plug-in mutual information between discretized code dims (rows)
/// and factors (columns), in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct MIMatrix {
    pub d: usize,
    pub k: usize,
    /// Row-major `d × k`.
    pub values: Vec<f64>,
    pub code_entropy: Vec<f64>,
    pub factor_entropy: Vec<f64>,
}

impl MIMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.d).map(|i| self.get(i, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.d).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Discretizes one code dimension into at most `bins` labels.
///
/// A dimension with at most `bins` distinct values gets one label per value
/// (ordered). Otherwise labels are equal-mass quantile bins over ranks:
/// `floor(rank * bins / N)`, where tied values share their lowest rank. Both
/// rules depend only on the order of the values, so any strictly increasing
/// transform of a dimension leaves its labels unchanged.
pub fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut distinct = 0usize;
    for (pos, &i) in order.iter().enumerate() {
        if pos == 0 || values[i] != values[order[pos - 1]] {
            distinct += 1;
        }
    }
    let mut labels = vec![0usize; n];
    let mut dense = 0usize;
    let mut min_rank = 0usize;
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && values[i] != values[order[pos - 1]] {
            dense += 1;
            min_rank = pos;
        }
        labels[i] = if distinct <= bins { dense } else { min_rank * bins / n };
    }
    labels
}

fn counts(labels: &[usize]) -> Vec<usize> {
    let mut c = vec![0usize; labels.iter().max().map_or(0, |&m| m + 1)];
    for &l in labels {
        c[l] += 1;
    }
    c
}

fn entropy_of_counts(counts: impl IntoIterator<Item = usize>, n: usize) -> f64 {
    let n = n as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in entropy in nats of a label sequence; `0·ln 0 = 0`.
pub fn entropy(labels: &[usize]) -> f64 {
    entropy_of_counts(counts(labels), labels.len())
}

fn mutual_information(a: &[usize], b: &[usize], ha: f64, hb: f64) -> f64 {
    let nb = b.iter().max().map_or(0, |&m| m + 1);
    let na = a.iter().max().map_or(0, |&m| m + 1);
    let mut joint = vec![0usize; na * nb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * nb + y] += 1;
    }
    let hab = entropy_of_counts(joint, a.len());
    (ha + hb - hab).clamp(0.0, ha.min(hb))
}

/// Discretizes every code dim and computes the plug-in MI matrix against the
/// factors.
pub fn discretize_and_mi(reps: &RepresentationMatrix, factors: &FactorMatrix, bins: usize) -> Result<MIMatrix> {
    check_rows(reps, factors)?;
    if bins < 2 {
        return Err(Error::Validation(format!("bins must be at least 2, got {bins}")));
    }
    if reps.rows() < bins {
        return Err(Error::Validation(format!("need at least {bins} samples, got {}", reps.rows())));
    }
    let (d, k) = (reps.cols(), factors.cols());
    let codes: Vec<Vec<usize>> = (0..d).map(|i| discretize(&reps.column(i), bins)).collect();
    let fcols: Vec<Vec<usize>> = (0..k).map(|j| factors.column(j)).collect();
    let code_entropy: Vec<f64> = codes.iter().map(|c| entropy(c)).collect();
    let factor_entropy: Vec<f64> = fcols.iter().map(|c| entropy(c)).collect();
    let mut values = Vec::with_capacity(d * k);
    for i in 0..d {
        for j in 0..k {
            values.push(mutual_information(&codes[i], &fcols[j], code_entropy[i], factor_entropy[j]));
        }
    }
    Ok(MIMatrix { d, k, values, code_entropy, factor_entropy })
}

/// Mean normalized gap between the two most informative code dims per
/// factor; factors with zero entropy are skipped.
pub fn mig_from_mi(mi: &MIMatrix) -> Result<f64> {
    let gaps: Vec<f64> = (0..mi.k)
        .filter(|&j| mi.factor_entropy[j] > 0.0)
        .map(|j| {
            let (top, second) = top_two(&mi.column(j));
            (top - second) / mi.factor_entropy[j]
        })
        .collect();
    if gaps.is_empty() {
        return Err(Error::Undefined("MIG needs at least one non-constant factor".into()));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

pub fn mig(reps: &RepresentationMatrix, factors: &FactorMatrix, bins: usize) -> Result<MetricReport> {
    let mi = discretize_and_mi(reps, factors, bins)?;
    let score = mig_from_mi(&mi)?;
    Ok(MetricReport::new("mig", score, 0, reps.rows(), 0)?.with_matrix("mi", mi.to_rows()))
}

/// Mean over code dims of `1 − Σ_{j≠argmax} MI_ij² / (θ_i²·(k−1))` with
/// `θ_i = max_j MI_ij`; dims carrying no information score 0.
pub fn modularity_from_mi(mi: &MIMatrix) -> Result<f64> {
    if mi.k < 2 {
        return Err(Error::Validation(format!("modularity needs at least 2 factors, got {}", mi.k)));
    }
    if mi.d == 0 {
        return Err(Error::Validation("modularity needs at least one code dim".into()));
    }
    let per_dim = (0..mi.d).map(|i| {
        let row = mi.row(i);
        let best = argmax(row);
        let theta = row[best];
        if theta <= 0.0 {
            return 0.0;
        }
        let off: f64 = row.iter().enumerate().filter(|&(j, _)| j != best).map(|(_, &v)| v * v).sum();
        1.0 - off / (theta * theta * (mi.k - 1) as f64)
    });
    Ok(stable_sum(per_dim) / mi.d as f64)
}

pub fn modularity(reps: &RepresentationMatrix, factors: &FactorMatrix, bins: usize) -> Result<MetricReport> {
    let mi = discretize_and_mi(reps, factors, bins)?;
    let score = modularity_from_mi(&mi)?;
    Ok(MetricReport::new("modularity", score, 0, reps.rows(), 0)?.with_matrix("mi", mi.to_rows()))
}
