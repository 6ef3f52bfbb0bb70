//! The two metrics that predict which factor was held fixed in a batch.

use rand::Rng;

use super::{argmax, MetricReport, MetricsConfig, Representation};
use crate::grad::{AdamConfig, Graph, ParamSet, Tensor2};
use crate::rng::{self, StreamRng};
use crate::worlds::{FactorMatrix, FactorWorld};
use crate::{Error, Result};

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Tensor2,
    bias: Tensor2,
}

fn standardize_stats(x: &Tensor2) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mean: Vec<f64> = (0..x.cols()).map(|c| (0..x.rows()).map(|r| x.get(r, c)).sum::<f64>() / n).collect();
    let scale = (0..x.cols())
        .map(|c| {
            let var = (0..x.rows()).map(|r| (x.get(r, c) - mean[c]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                1.0 / var.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    (mean, scale)
}

fn apply_standardize(x: &Tensor2, mean: &[f64], scale: &[f64]) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            out.set(r, c, (x.get(r, c) - mean[c]) * scale[c]);
        }
    }
    out
}

/// Full-batch Adam on the mean cross-entropy, starting from zero weights.
pub fn fit_logistic(
    x: &Tensor2,
    labels: &[usize],
    classes: usize,
    iterations: usize,
    lr: f64,
) -> Result<LogisticModel> {
    if x.rows() != labels.len() || x.rows() == 0 {
        return Err(Error::Shape(format!("{} feature rows for {} labels", x.rows(), labels.len())));
    }
    let (mean, scale) = standardize_stats(x);
    let xs = apply_standardize(x, &mean, &scale);
    let mut params = ParamSet::new();
    let w = params.insert("w", Tensor2::zeros(x.cols(), classes));
    let b = params.insert("b", Tensor2::zeros(1, classes));
    let adam = AdamConfig { lr, ..AdamConfig::default() };
    for _ in 0..iterations {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let input = g.leaf(xs.clone());
        let logits = g.affine(input, bound.node(w), bound.node(b))?;
        let loss = g.softmax_cross_entropy(logits, labels.to_vec())?;
        let mut grads = g.backward(loss)?;
        params.adam_step(&bound.gradients(&mut grads), &adam)?;
    }
    Ok(LogisticModel { mean, scale, weights: params.value(w).clone(), bias: params.value(b).clone() })
}

impl LogisticModel {
    pub fn predict(&self, x: &Tensor2) -> Result<Vec<usize>> {
        let logits = crate::grad::affine(&apply_standardize(x, &self.mean, &self.scale), &self.weights, &self.bias)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    pub fn accuracy(&self, x: &Tensor2, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len().max(1) as f64)
    }
}

fn informative(world: &FactorWorld) -> Result<Vec<usize>> {
    let f = world.space().informative_factors();
    if f.is_empty() {
        return Err(Error::Undefined("world has no factor with more than one value".into()));
    }
    Ok(f)
}

/// One BetaVAE training point: the mean absolute code difference over
/// `batch` pairs sharing the value of factor `fixed`.
fn beta_vae_point(
    world: &FactorWorld,
    rep: &dyn Representation,
    fixed: usize,
    batch: usize,
    r: &mut StreamRng,
) -> Result<Vec<f64>> {
    let space = world.space();
    let k = space.len();
    let a = space.sample_with(batch, r);
    let b = space.sample_with(batch, r);
    let mut data = b.data().to_vec();
    for i in 0..batch {
        data[i * k + fixed] = a.get(i, fixed);
    }
    let b = FactorMatrix::new(space.cardinalities(), data)?;
    let (ra, rb) = (rep.represent(&a)?, rep.represent(&b)?);
    let d = ra.cols();
    let mut feat = vec![0.0; d];
    for i in 0..batch {
        for (c, f) in feat.iter_mut().enumerate() {
            *f += (ra.get(i, c) - rb.get(i, c)).abs();
        }
    }
    feat.iter_mut().for_each(|f| *f /= batch as f64);
    Ok(feat)
}

fn beta_vae_points(
    world: &FactorWorld,
    rep: &dyn Representation,
    factors: &[usize],
    n: usize,
    batch: usize,
    r: &mut StreamRng,
) -> Result<(Tensor2, Vec<usize>)> {
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = r.random_range(0..factors.len());
        rows.push(beta_vae_point(world, rep, factors[label], batch, r)?);
        labels.push(label);
    }
    Ok((Tensor2::from_rows(&rows)?, labels))
}

/// Accuracy of a linear classifier predicting the fixed factor from mean
/// absolute code differences.
pub fn beta_vae_score(
    world: &FactorWorld,
    rep: &dyn Representation,
    config: &MetricsConfig,
    seed: u64,
) -> Result<MetricReport> {
    let factors = informative(world)?;
    let (n_train, n_test, batch) = (config.n_train, config.n_test, config.batch_size);
    let mut r = rng::stream(seed, rng::streams::EVAL);
    let (xtr, ytr) = beta_vae_points(world, rep, &factors, n_train, batch, &mut r)?;
    let (xte, yte) = beta_vae_points(world, rep, &factors, n_test, batch, &mut r)?;
    let model = fit_logistic(&xtr, &ytr, factors.len(), config.logistic_iterations, config.logistic_lr)?;
    let train_acc = model.accuracy(&xtr, &ytr)?;
    let score = model.accuracy(&xte, &yte)?;
    Ok(MetricReport::new("beta_vae", score, seed, n_train, n_test)?.with_extra("train_accuracy", train_acc))
}

fn column_variances(m: &crate::vae::RepresentationMatrix) -> Vec<f64> {
    let n = m.rows() as f64;
    (0..m.cols())
        .map(|c| {
            let col = m.column(c);
            let mean = col.iter().sum::<f64>() / n;
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        })
        .collect()
}

/// Majority-vote accuracy of "code dim with the smallest normalized variance"
/// predicting the fixed factor. Codes are normalized by their global standard
/// deviation; dims whose normalized global variance is below the pruning
/// threshold never vote. Only dims without variance fall under the threshold,
/// so the score is invariant under positive per-dim scaling. If every dim is
/// pruned the score is 0 and the `collapsed` extra is 1.
pub fn factor_vae_score(
    world: &FactorWorld,
    rep: &dyn Representation,
    config: &MetricsConfig,
    seed: u64,
) -> Result<MetricReport> {
    let factors = informative(world)?;
    let (n_train, n_test, batch) = (config.n_train, config.n_test, config.batch_size);
    let mut r = rng::stream(seed, rng::streams::EVAL);
    let global = rep.represent(&world.sample_factors_with(config.n_variance, &mut r))?;
    let global_var = column_variances(&global);
    let std: Vec<f64> = global_var.iter().map(|v| v.sqrt()).collect();
    let normalized_var = column_variances(&global.map_columns(|c, v| if std[c] > 0.0 { v / std[c] } else { 0.0 })?);
    let kept: Vec<usize> = (0..global_var.len()).filter(|&c| normalized_var[c] >= config.prune_threshold).collect();
    if kept.is_empty() {
        return Ok(MetricReport::new("factor_vae", 0.0, seed, n_train, n_test)?.with_extra("collapsed", 1.0));
    }
    let vote = |r: &mut StreamRng| -> Result<(usize, usize)> {
        let label = r.random_range(0..factors.len());
        let (f, _) = world.sample_with_factor_fixed_with(factors[label], batch, r)?;
        let var = column_variances(&rep.represent(&f)?);
        let normalized: Vec<f64> = kept.iter().map(|&c| -(var[c] / global_var[c])).collect();
        Ok((argmax(&normalized), label))
    };
    let mut table = vec![vec![0usize; factors.len()]; kept.len()];
    for _ in 0..n_train {
        let (dim, label) = vote(&mut r)?;
        table[dim][label] += 1;
    }
    let assignment: Vec<usize> =
        table.iter().map(|row| argmax(&row.iter().map(|&c| c as f64).collect::<Vec<_>>())).collect();
    let train_hits: usize = table.iter().zip(&assignment).map(|(row, &a)| row[a]).sum();
    let mut hits = 0usize;
    for _ in 0..n_test {
        let (dim, label) = vote(&mut r)?;
        hits += (assignment[dim] == label) as usize;
    }
    Ok(MetricReport::new("factor_vae", hits as f64 / n_test as f64, seed, n_train, n_test)?
        .with_extra("collapsed", 0.0)
        .with_extra("train_accuracy", train_hits as f64 / n_train as f64)
        .with_extra("active_dims", kept.len() as f64))
}
