use super::forest::{ForestConfig, RandomForest};
use super::{check_rows, stable_sum, MetricReport};
use crate::rng::derive_seed;
use crate::vae::RepresentationMatrix;
use crate::worlds::FactorMatrix;
use crate::{Error, Result};

pub const DCI_MIN_TRAIN: usize = 1000;
pub const DCI_MIN_TEST: usize = 500;

/// Non-negative `d × k` importance of code dim `i` for predicting factor `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrix {
    pub d: usize,
    pub k: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

impl ImportanceMatrix {
    pub fn new(d: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != d * k {
            return Err(Error::Shape(format!("{} values for a {d}x{k} importance matrix", values.len())));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Validation("importance entries must be finite and non-negative".into()));
        }
        Ok(Self { d, k, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.k.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// Each non-zero column scaled to sum to one.
    pub fn column_normalized(&self) -> Self {
        let mut values = self.values.clone();
        for j in 0..self.k {
            let s = stable_sum((0..self.d).map(|i| self.get(i, j)));
            if s > 0.0 {
                for i in 0..self.d {
                    values[i * self.k + j] /= s;
                }
            }
        }
        Self { d: self.d, k: self.k, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DciComponents {
    pub disentanglement: f64,
    pub completeness: f64,
    /// `D_i` per code dim.
    pub per_dim: Vec<f64>,
}

/// Entropy of a non-negative profile with base `base`; 0 for a single
/// outcome or an all-zero profile.
fn entropy_base(profile: &[f64], base: usize) -> f64 {
    let total: f64 = profile.iter().sum();
    if base < 2 || total <= 0.0 {
        return 0.0;
    }
    let h: f64 = profile
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    h / (base as f64).ln()
}

/// Disentanglement `Σ_i ρ_i (1 − H_k(P_i·))` and completeness from an
/// importance matrix, after normalizing each factor's column to sum to one.
/// An all-zero matrix scores 0.
pub fn dci_from_importance(importance: &ImportanceMatrix) -> Result<DciComponents> {
    if importance.d == 0 || importance.k == 0 {
        return Err(Error::Undefined("DCI of an empty importance matrix".into()));
    }
    let r = importance.column_normalized();
    let (d, k) = (r.d, r.k);
    let row_sums: Vec<f64> = (0..d).map(|i| (0..k).map(|j| r.get(i, j)).sum()).collect();
    let total = stable_sum(row_sums.iter().copied());
    let per_dim: Vec<f64> = (0..d)
        .map(|i| {
            let row: Vec<f64> = (0..k).map(|j| r.get(i, j)).collect();
            if row_sums[i] > 0.0 {
                1.0 - entropy_base(&row, k)
            } else {
                0.0
            }
        })
        .collect();
    let disentanglement = if total > 0.0 { stable_sum((0..d).map(|i| row_sums[i] / total * per_dim[i])) } else { 0.0 };
    let col_sums: Vec<f64> = (0..k).map(|j| stable_sum((0..d).map(|i| r.get(i, j)))).collect();
    let col_total: f64 = col_sums.iter().sum();
    let completeness = if col_total > 0.0 {
        (0..k)
            .map(|j| {
                let col: Vec<f64> = (0..d).map(|i| r.get(i, j)).collect();
                col_sums[j] / col_total * (1.0 - entropy_base(&col, d))
            })
            .sum()
    } else {
        0.0
    };
    Ok(DciComponents { disentanglement, completeness, per_dim })
}

/// One random forest per informative factor; importance is the forest's mean
/// impurity decrease per code dim. Informativeness (mean test accuracy) and
/// completeness are reported as extras.
pub fn dci_disentanglement(
    train_reps: &RepresentationMatrix,
    train_factors: &FactorMatrix,
    test_reps: &RepresentationMatrix,
    test_factors: &FactorMatrix,
    forest: &ForestConfig,
    seed: u64,
) -> Result<MetricReport> {
    check_rows(train_reps, train_factors)?;
    check_rows(test_reps, test_factors)?;
    if train_reps.rows() < DCI_MIN_TRAIN || test_reps.rows() < DCI_MIN_TEST {
        return Err(Error::Validation(format!(
            "DCI needs at least {DCI_MIN_TRAIN} train and {DCI_MIN_TEST} test samples, got {} and {}",
            train_reps.rows(),
            test_reps.rows()
        )));
    }
    if train_reps.cols() != test_reps.cols() {
        return Err(Error::Shape("train and test codes differ in width".into()));
    }
    let cards = train_factors.cardinalities();
    let factors: Vec<usize> = (0..cards.len()).filter(|&j| cards[j] > 1).collect();
    if factors.is_empty() {
        return Err(Error::Undefined("DCI needs at least one factor with cardinality > 1".into()));
    }
    let d = train_reps.cols();
    let mut columns = Vec::with_capacity(factors.len());
    let mut accuracy = Vec::with_capacity(factors.len());
    for &j in &factors {
        let y = train_factors.column(j);
        let f = RandomForest::fit(train_reps, &y, cards[j], forest, derive_seed(seed, &format!("factor/{j}")))?;
        accuracy.push(f.accuracy(test_reps, &test_factors.column(j)));
        columns.push(f.importance().to_vec());
    }
    let k = factors.len();
    let values = (0..d).flat_map(|i| columns.iter().map(move |c| c[i])).collect();
    let importance = ImportanceMatrix::new(d, k, values)?;
    let parts = dci_from_importance(&importance)?;
    let informativeness = accuracy.iter().sum::<f64>() / k as f64;
    Ok(MetricReport::new("dci", parts.disentanglement, seed, train_reps.rows(), test_reps.rows())?
        .with_extra("completeness", parts.completeness)
        .with_extra("informativeness", informativeness)
        .with_matrix("importance", importance.to_rows()))
}
