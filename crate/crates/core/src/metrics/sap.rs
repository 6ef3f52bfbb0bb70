use super::dci::{DCI_MIN_TEST, DCI_MIN_TRAIN};
use super::{check_rows, top_two, MetricReport};
use crate::vae::RepresentationMatrix;
use crate::worlds::{normalized_value, FactorMatrix};
use crate::{Error, Result};

/// Held-out R² of `y ≈ a + b·x` fitted by least squares on the train split.
/// Clamped at 0; a constant train feature predicts the train mean.
fn heldout_r2(x_train: &[f64], y_train: &[f64], x_test: &[f64], y_test: &[f64]) -> f64 {
    let n = x_train.len() as f64;
    let mx = x_train.iter().sum::<f64>() / n;
    let my = y_train.iter().sum::<f64>() / n;
    let sxx: f64 = x_train.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = x_train.iter().zip(y_train).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let mt = y_test.iter().sum::<f64>() / y_test.len() as f64;
    let sst: f64 = y_test.iter().map(|y| (y - mt) * (y - mt)).sum();
    if sst <= 0.0 {
        return 0.0;
    }
    let sse: f64 = x_test.iter().zip(y_test).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    (1.0 - sse / sst).max(0.0)
}

/// `d × k'` held-out R² matrix over the factors with cardinality > 1,
/// together with the indices of those factors.
pub fn r2_matrix(
    train_reps: &RepresentationMatrix,
    train_factors: &FactorMatrix,
    test_reps: &RepresentationMatrix,
    test_factors: &FactorMatrix,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    check_rows(train_reps, train_factors)?;
    check_rows(test_reps, test_factors)?;
    if train_reps.cols() != test_reps.cols() {
        return Err(Error::Shape("train and test codes differ in width".into()));
    }
    let cards = train_factors.cardinalities();
    let factors: Vec<usize> = (0..cards.len()).filter(|&j| cards[j] > 1).collect();
    if factors.is_empty() {
        return Err(Error::Undefined("SAP needs at least one factor with cardinality > 1".into()));
    }
    let norm = |m: &FactorMatrix, j: usize| -> Vec<f64> {
        m.column(j).into_iter().map(|v| normalized_value(v, cards[j])).collect()
    };
    let ys: Vec<(Vec<f64>, Vec<f64>)> =
        factors.iter().map(|&j| (norm(train_factors, j), norm(test_factors, j))).collect();
    let matrix = (0..train_reps.cols())
        .map(|i| {
            let (xtr, xte) = (train_reps.column(i), test_reps.column(i));
            ys.iter().map(|(ytr, yte)| heldout_r2(&xtr, ytr, &xte, yte)).collect()
        })
        .collect();
    Ok((matrix, factors))
}

/// Mean over factors of the gap between the two largest entries of each
/// column of `s` (rows are code dims).
pub fn sap_from_matrix(s: &[Vec<f64>]) -> Result<f64> {
    let k = s.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(Error::Undefined("SAP of an empty score matrix".into()));
    }
    let gaps: f64 = (0..k)
        .map(|j| {
            let (top, second) = top_two(&s.iter().map(|row| row[j]).collect::<Vec<_>>());
            top - second
        })
        .sum();
    Ok(gaps / k as f64)
}

pub fn sap_score(
    train_reps: &RepresentationMatrix,
    train_factors: &FactorMatrix,
    test_reps: &RepresentationMatrix,
    test_factors: &FactorMatrix,
) -> Result<MetricReport> {
    if train_reps.rows() < DCI_MIN_TRAIN || test_reps.rows() < DCI_MIN_TEST {
        return Err(Error::Validation(format!(
            "SAP needs at least {DCI_MIN_TRAIN} train and {DCI_MIN_TEST} test samples, got {} and {}",
            train_reps.rows(),
            test_reps.rows()
        )));
    }
    let (s, _) = r2_matrix(train_reps, train_factors, test_reps, test_factors)?;
    let score = sap_from_matrix(&s)?;
    Ok(MetricReport::new("sap", score, 0, train_reps.rows(), test_reps.rows())?.with_matrix("r2", s))
}
