use serde::{Deserialize, Serialize};

use super::stable_sum;
use crate::rng::derive_seed;
use crate::vae::{Checkpoint, RepresentationMatrix};
use crate::worlds::FactorWorld;
use crate::{Error, Result};

pub const GAUSSIAN_TC_RIDGE: f64 = 1e-6;
pub const UNSUPERVISED_MIN_SAMPLES: usize = 1000;

/// Scores that need no ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnsupervisedScores {
    pub recon: f64,
    pub kl: f64,
    /// `−(recon + kl)`.
    pub elbo: f64,
    pub gaussian_tc: f64,
}

fn cholesky_log_det(a: &[f64], n: usize) -> Result<f64> {
    let mut l = vec![0.0; n * n];
    let mut log_det = 0.0;
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if !(diag > 0.0) {
            return Err(Error::Numeric(format!("covariance is not positive definite (pivot {j} = {diag})")));
        }
        let ljj = diag.sqrt();
        l[j * n + j] = ljj;
        log_det += 2.0 * ljj.ln();
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / ljj;
        }
    }
    Ok(log_det)
}

/// Total correlation of a Gaussian fitted to the codes:
/// `0.5·(Σ ln Σ̂_ii − ln det Σ̂)` with `Σ̂` the empirical covariance plus
/// `1e-6·I`. Columns are put into a canonical order first, so permuting code
/// dims gives a bit-identical result.
pub fn gaussian_tc(reps: &RepresentationMatrix) -> Result<f64> {
    let (n, d) = (reps.rows(), reps.cols());
    if n < 2 || d == 0 {
        return Err(Error::Validation(format!("gaussian_tc needs at least 2 rows and 1 column, got {n}x{d}")));
    }
    let mut cols: Vec<Vec<f64>> = (0..d).map(|c| reps.column(c)).collect();
    cols.sort_by(|a, b| {
        a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let centered: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n as f64;
            c.iter().map(|v| v - m).collect()
        })
        .collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let v = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
        cov[i * d + i] += GAUSSIAN_TC_RIDGE;
    }
    let log_det = cholesky_log_det(&cov, d)?;
    let log_diag = stable_sum((0..d).map(|i| cov[i * d + i].ln()));
    Ok(0.5 * (log_diag - log_det))
}

/// Reconstruction, KL and ELBO on `n` fresh samples, and the Gaussian total
/// correlation of their encoder means.
pub fn unsupervised_scores(
    checkpoint: &Checkpoint,
    world: &FactorWorld,
    n: usize,
    seed: u64,
) -> Result<UnsupervisedScores> {
    if n < UNSUPERVISED_MIN_SAMPLES {
        return Err(Error::Validation(format!(
            "unsupervised scores need at least {UNSUPERVISED_MIN_SAMPLES} samples, got {n}"
        )));
    }
    let obs = world.render(&world.sample_factors(n, derive_seed(seed, "unsupervised/sample")))?;
    let (recon, kl) = checkpoint.evaluate_elbo(&obs, derive_seed(seed, "unsupervised/noise"))?;
    let gaussian_tc = gaussian_tc(&checkpoint.encode(&obs)?)?;
    Ok(UnsupervisedScores { recon, kl, elbo: -(recon + kl), gaussian_tc })
}
