use std::f64::consts::PI;

use super::tensor::{affine, gemm, logsumexp, sigmoid, softplus, Tensor2};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Abs(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    Concat(NodeId, NodeId),
    SliceCols { a: NodeId, start: usize },
    Sum(NodeId),
    Mean(NodeId),
    Reparameterize { mu: NodeId, log_var: NodeId, noise: Tensor2 },
    BernoulliRecon { logits: NodeId, targets: Tensor2 },
    GaussianKl { mu: NodeId, log_var: NodeId },
    TcMws { z: NodeId, mu: NodeId, log_var: NodeId },
    CovPenalty { mu: NodeId, log_var: Option<NodeId>, lambda_od: f64, lambda_d: f64 },
    SoftmaxXent { logits: NodeId, labels: Vec<usize> },
}

struct Node {
    op: Op,
    value: Tensor2,
}

/// A single-owner computation graph. Nodes are appended in evaluation order,
/// so insertion order is a topological order and backward is one reverse
/// sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `id`; zeros when `id` does not influence the loss.
    pub fn get(&self, id: NodeId) -> Tensor2 {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Tensor2::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor2 {
        match self.grads[id.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[id.0];
                Tensor2::zeros(r, c)
            }
        }
    }
}

fn same_shape(op: &str, a: &Tensor2, b: &Tensor2) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_finite(op: &str, t: &Tensor2) -> Result<()> {
    if !t.all_finite() {
        return Err(Error::Numeric(format!("{op}: non-finite input")));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor2) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    /// Inputs and parameters enter the graph as leaves.
    pub fn leaf(&mut self, value: Tensor2) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let v = affine(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Affine { x, w, b }, v))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("mul", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), v)
    }

    /// Adds a constant to every entry.
    pub fn shift(&mut self, a: NodeId, offset: f64) -> NodeId {
        let v = self.value(a).map(|x| x + offset);
        self.push(Op::Shift(a), v)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::Shape(format!("concat: {:?} and {:?}", va.shape(), vb.shape())));
        }
        let cols = va.cols() + vb.cols();
        let mut data = Vec::with_capacity(va.rows() * cols);
        for r in 0..va.rows() {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let v = Tensor2::new(va.rows(), cols, data)?;
        Ok(self.push(Op::Concat(a, b), v))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start + len > va.cols() {
            return Err(Error::Shape(format!("slice_cols {start}..{} of {:?}", start + len, va.shape())));
        }
        let mut data = Vec::with_capacity(va.rows() * len);
        for r in 0..va.rows() {
            data.extend_from_slice(&va.row(r)[start..start + len]);
        }
        let v = Tensor2::new(va.rows(), len, data)?;
        Ok(self.push(Op::SliceCols { a, start }, v))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor2::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let v = Tensor2::scalar(va.data().iter().sum::<f64>() / va.len().max(1) as f64);
        self.push(Op::Mean(a), v)
    }

    /// `mu + exp(log_var / 2) * noise` with caller-supplied standard normal
    /// noise.
    pub fn gaussian_reparameterize(&mut self, mu: NodeId, log_var: NodeId, noise: Tensor2) -> Result<NodeId> {
        same_shape("reparameterize", self.value(mu), self.value(log_var))?;
        same_shape("reparameterize noise", self.value(mu), &noise)?;
        let std = self.value(log_var).map(|lv| (0.5 * lv).exp());
        let v = self.value(mu).zip_map(&std.zip_map(&noise, |s, e| s * e), |m, se| m + se);
        Ok(self.push(Op::Reparameterize { mu, log_var, noise }, v))
    }

    /// Batch mean of the per-sample summed sigmoid cross-entropy.
    pub fn bernoulli_recon(&mut self, logits: NodeId, targets: Tensor2) -> Result<NodeId> {
        let l = self.value(logits);
        same_shape("bernoulli_recon", l, &targets)?;
        check_finite("bernoulli_recon", l)?;
        check_finite("bernoulli_recon", &targets)?;
        if targets.data().iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Validation("bernoulli_recon: targets outside [0, 1]".into()));
        }
        let total: f64 = l.data().iter().zip(targets.data()).map(|(&x, &t)| softplus(x) - t * x).sum();
        let v = Tensor2::scalar(total / l.rows().max(1) as f64);
        Ok(self.push(Op::BernoulliRecon { logits, targets }, v))
    }

    /// Batch mean of `KL(N(mu, exp(log_var)) || N(0, I))`.
    pub fn gaussian_kl_to_standard(&mut self, mu: NodeId, log_var: NodeId) -> Result<NodeId> {
        let (m, lv) = (self.value(mu), self.value(log_var));
        same_shape("gaussian_kl", m, lv)?;
        check_finite("gaussian_kl", m)?;
        check_finite("gaussian_kl", lv)?;
        let v = Tensor2::scalar(gaussian_kl(m, lv));
        Ok(self.push(Op::GaussianKl { mu, log_var }, v))
    }

    /// Minibatch estimate of the total correlation of the aggregate
    /// posterior, evaluated at the batch samples `z`.
    pub fn tc_mws(&mut self, z: NodeId, mu: NodeId, log_var: NodeId) -> Result<NodeId> {
        let (vz, vm, vl) = (self.value(z), self.value(mu), self.value(log_var));
        same_shape("tc_mws", vz, vm)?;
        same_shape("tc_mws", vz, vl)?;
        if vz.rows() < 2 {
            return Err(Error::Validation("tc_mws needs a batch of at least 2".into()));
        }
        let v = Tensor2::scalar(tc_mws(vz, vm, vl));
        Ok(self.push(Op::TcMws { z, mu, log_var }, v))
    }

    /// DIP-VAE moment penalty on `Cov[mu]`, or on
    /// `Cov[mu] + E[diag(exp(log_var))]` when `log_var` is given.
    pub fn cov_penalty(
        &mut self,
        mu: NodeId,
        log_var: Option<NodeId>,
        lambda_od: f64,
        lambda_d: f64,
    ) -> Result<NodeId> {
        if let Some(lv) = log_var {
            same_shape("cov_penalty", self.value(mu), self.value(lv))?;
        }
        let cov = latent_covariance(self.value(mu), log_var.map(|lv| self.value(lv)));
        let v = Tensor2::scalar(cov_penalty_value(&cov, lambda_od, lambda_d));
        Ok(self.push(Op::CovPenalty { mu, log_var, lambda_od, lambda_d }, v))
    }

    /// Batch mean of softmax cross-entropy against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> Result<NodeId> {
        let l = self.value(logits);
        if labels.len() != l.rows() || labels.iter().any(|&y| y >= l.cols()) {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: {} labels for logits {:?}",
                labels.len(),
                l.shape()
            )));
        }
        let total: f64 = (0..l.rows()).map(|r| logsumexp(l.row(r).iter().copied()) - l.get(r, labels[r])).sum();
        let v = Tensor2::scalar(total / l.rows().max(1) as f64);
        Ok(self.push(Op::SoftmaxXent { logits, labels }, v))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor2::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape()).collect() })
    }

    fn propagate(&self, idx: usize, g: &Tensor2, grads: &mut [Option<Tensor2>]) {
        let node = &self.nodes[idx];
        let mut acc = |id: NodeId, t: Tensor2| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let mut dx = Tensor2::zeros(vx.rows(), vx.cols());
                gemm(g, false, vw, true, 0.0, &mut dx);
                let mut dw = Tensor2::zeros(vw.rows(), vw.cols());
                gemm(vx, true, g, false, 0.0, &mut dw);
                let mut db = Tensor2::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*x, dx);
                acc(*w, dw);
                acc(*b, db);
            }
            Op::Relu(a) => {
                acc(*a, self.value(*a).zip_map(g, |x, g| if x > 0.0 { g } else { 0.0 }));
            }
            Op::Tanh(a) => acc(*a, node.value.zip_map(g, |y, g| g * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, node.value.zip_map(g, |y, g| g * y * (1.0 - y))),
            Op::Exp(a) => acc(*a, node.value.zip_map(g, |y, g| g * y)),
            Op::Abs(a) => acc(*a, self.value(*a).zip_map(g, |x, g| g * x.signum() * (x != 0.0) as u8 as f64)),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, self.value(*b).zip_map(g, |y, g| y * g));
                acc(*b, self.value(*a).zip_map(g, |x, g| x * g));
            }
            Op::Scale(a, f) => acc(*a, g.map(|v| v * f)),
            Op::Shift(a) => acc(*a, g.clone()),
            Op::Concat(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let mut ga = Vec::with_capacity(g.rows() * ca);
                let mut gb = Vec::with_capacity(g.rows() * cb);
                for r in 0..g.rows() {
                    ga.extend_from_slice(&g.row(r)[..ca]);
                    gb.extend_from_slice(&g.row(r)[ca..]);
                }
                acc(*a, Tensor2::new(g.rows(), ca, ga).expect("concat grad shape"));
                acc(*b, Tensor2::new(g.rows(), cb, gb).expect("concat grad shape"));
            }
            Op::SliceCols { a, start } => {
                let va = self.value(*a);
                let mut ga = Tensor2::zeros(va.rows(), va.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        ga.set(r, start + c, g.get(r, c));
                    }
                }
                acc(*a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Tensor2::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Tensor2::filled(r, c, g.item() / (r * c).max(1) as f64));
            }
            Op::Reparameterize { mu, log_var, noise } => {
                acc(*mu, g.clone());
                let lv = self.value(*log_var);
                let mut d = lv.zip_map(noise, |lv, e| 0.5 * (0.5 * lv).exp() * e);
                for (dv, gv) in d.data_mut().iter_mut().zip(g.data()) {
                    *dv *= gv;
                }
                acc(*log_var, d);
            }
            Op::BernoulliRecon { logits, targets } => {
                let l = self.value(*logits);
                let s = g.item() / l.rows().max(1) as f64;
                acc(*logits, l.zip_map(targets, |x, t| s * (sigmoid(x) - t)));
            }
            Op::GaussianKl { mu, log_var } => {
                let s = g.item() / self.value(*mu).rows().max(1) as f64;
                acc(*mu, self.value(*mu).map(|m| s * m));
                acc(*log_var, self.value(*log_var).map(|lv| s * 0.5 * (lv.exp() - 1.0)));
            }
            Op::TcMws { z, mu, log_var } => {
                let (dz, dm, dl) = tc_mws_grad(self.value(*z), self.value(*mu), self.value(*log_var));
                let s = g.item();
                acc(*z, dz.map(|v| v * s));
                acc(*mu, dm.map(|v| v * s));
                acc(*log_var, dl.map(|v| v * s));
            }
            Op::CovPenalty { mu, log_var, lambda_od, lambda_d } => {
                let vm = self.value(*mu);
                let vl = log_var.map(|lv| self.value(lv));
                let (dm, dl) = cov_penalty_grad(vm, vl, *lambda_od, *lambda_d);
                let s = g.item();
                acc(*mu, dm.map(|v| v * s));
                if let (Some(lv), Some(dl)) = (log_var, dl) {
                    acc(*lv, dl.map(|v| v * s));
                }
            }
            Op::SoftmaxXent { logits, labels } => {
                let l = self.value(*logits);
                let s = g.item() / l.rows().max(1) as f64;
                let mut d = Tensor2::zeros(l.rows(), l.cols());
                for r in 0..l.rows() {
                    let lse = logsumexp(l.row(r).iter().copied());
                    for c in 0..l.cols() {
                        let p = (l.get(r, c) - lse).exp();
                        let y = (c == labels[r]) as u8 as f64;
                        d.set(r, c, s * (p - y));
                    }
                }
                acc(*logits, d);
            }
        }
    }
}

pub(crate) fn gaussian_kl(mu: &Tensor2, log_var: &Tensor2) -> f64 {
    let total: f64 = mu.data().iter().zip(log_var.data()).map(|(&m, &lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv)).sum();
    total / mu.rows().max(1) as f64
}

/// `ln N(z | mu, exp(log_var))` for one coordinate.
fn log_normal(z: f64, mu: f64, log_var: f64) -> f64 {
    let d = z - mu;
    -0.5 * ((2.0 * PI).ln() + log_var + d * d * (-log_var).exp())
}

/// Total-correlation estimate from one batch of posterior samples.
///
/// With `l[i][j][k] = ln q(z_ik | x_j)`, the aggregate posterior density at
/// sample `i` is estimated by averaging over the batch:
/// `ln q(z_i) ~ lse_j sum_k l[i][j][k] - ln B` and each marginal by
/// `ln q(z_ik) ~ lse_j l[i][j][k] - ln B`. The estimate is the batch mean of
/// `ln q(z_i) - sum_k ln q(z_ik)`.
pub fn tc_mws(z: &Tensor2, mu: &Tensor2, log_var: &Tensor2) -> f64 {
    let (b, d) = z.shape();
    let ln_b = (b as f64).ln();
    let mut total = 0.0;
    let mut joint = vec![0.0; b];
    let mut per_dim = vec![0.0; b * d];
    for i in 0..b {
        for j in 0..b {
            let mut s = 0.0;
            for k in 0..d {
                let l = log_normal(z.get(i, k), mu.get(j, k), log_var.get(j, k));
                per_dim[k * b + j] = l;
                s += l;
            }
            joint[j] = s;
        }
        let log_qz = logsumexp(joint.iter().copied()) - ln_b;
        let log_marginals: f64 = (0..d).map(|k| logsumexp(per_dim[k * b..(k + 1) * b].iter().copied()) - ln_b).sum();
        total += log_qz - log_marginals;
    }
    total / b as f64
}

fn tc_mws_grad(z: &Tensor2, mu: &Tensor2, log_var: &Tensor2) -> (Tensor2, Tensor2, Tensor2) {
    let (b, d) = z.shape();
    let inv_b = 1.0 / b as f64;
    let mut dz = Tensor2::zeros(b, d);
    let mut dm = Tensor2::zeros(b, d);
    let mut dl = Tensor2::zeros(b, d);
    let mut per_dim = vec![0.0; d * b];
    let mut joint = vec![0.0; b];
    let inv_var: Vec<f64> = log_var.data().iter().map(|lv| (-lv).exp()).collect();
    for i in 0..b {
        for j in 0..b {
            let mut s = 0.0;
            for k in 0..d {
                let l = log_normal(z.get(i, k), mu.get(j, k), log_var.get(j, k));
                per_dim[k * b + j] = l;
                s += l;
            }
            joint[j] = s;
        }
        let lse_joint = logsumexp(joint.iter().copied());
        let lse_dims: Vec<f64> = (0..d).map(|k| logsumexp(per_dim[k * b..(k + 1) * b].iter().copied())).collect();
        for j in 0..b {
            let w = (joint[j] - lse_joint).exp();
            for k in 0..d {
                let u = (per_dim[k * b + j] - lse_dims[k]).exp();
                // d(estimate)/d l[i][j][k]
                let c = inv_b * (w - u);
                if c == 0.0 {
                    continue;
                }
                let diff = z.get(i, k) - mu.get(j, k);
                let iv = inv_var[j * d + k];
                dz.data_mut()[i * d + k] -= c * diff * iv;
                dm.data_mut()[j * d + k] += c * diff * iv;
                dl.data_mut()[j * d + k] += c * (-0.5 + 0.5 * diff * diff * iv);
            }
        }
    }
    (dz, dm, dl)
}

/// Biased covariance of `mu` over the batch, plus `E[diag(exp(log_var))]`
/// when `log_var` is given.
pub fn latent_covariance(mu: &Tensor2, log_var: Option<&Tensor2>) -> Tensor2 {
    let (b, d) = mu.shape();
    let n = b.max(1) as f64;
    let mean: Vec<f64> = (0..d).map(|k| (0..b).map(|i| mu.get(i, k)).sum::<f64>() / n).collect();
    let mut centered = mu.clone();
    for i in 0..b {
        for k in 0..d {
            centered.data_mut()[i * d + k] -= mean[k];
        }
    }
    let mut cov = Tensor2::zeros(d, d);
    gemm(&centered, true, &centered, false, 0.0, &mut cov);
    for v in cov.data_mut() {
        *v /= n;
    }
    if let Some(lv) = log_var {
        for k in 0..d {
            let e: f64 = (0..b).map(|i| lv.get(i, k).exp()).sum::<f64>() / n;
            cov.data_mut()[k * d + k] += e;
        }
    }
    cov
}

pub fn cov_penalty_value(cov: &Tensor2, lambda_od: f64, lambda_d: f64) -> f64 {
    let d = cov.rows();
    let mut off = 0.0;
    let mut diag = 0.0;
    for i in 0..d {
        for j in 0..d {
            let c = cov.get(i, j);
            if i == j {
                diag += (c - 1.0) * (c - 1.0);
            } else {
                off += c * c;
            }
        }
    }
    lambda_od * off + lambda_d * diag
}

fn cov_penalty_grad(
    mu: &Tensor2,
    log_var: Option<&Tensor2>,
    lambda_od: f64,
    lambda_d: f64,
) -> (Tensor2, Option<Tensor2>) {
    let (b, d) = mu.shape();
    let n = b.max(1) as f64;
    let cov = latent_covariance(mu, log_var);
    // dP/dC, symmetric
    let mut gc = Tensor2::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let c = cov.get(i, j);
            gc.set(i, j, if i == j { 2.0 * lambda_d * (c - 1.0) } else { 2.0 * lambda_od * c });
        }
    }
    let mean: Vec<f64> = (0..d).map(|k| (0..b).map(|i| mu.get(i, k)).sum::<f64>() / n).collect();
    let mut centered = mu.clone();
    for i in 0..b {
        for k in 0..d {
            centered.data_mut()[i * d + k] -= mean[k];
        }
    }
    let mut dm = Tensor2::zeros(b, d);
    gemm(&centered, false, &gc, false, 0.0, &mut dm);
    for v in dm.data_mut() {
        *v *= 2.0 / n;
    }
    let dl = log_var.map(|lv| {
        let mut t = Tensor2::zeros(b, d);
        for i in 0..b {
            for k in 0..d {
                t.set(i, k, gc.get(k, k) * lv.get(i, k).exp() / n);
            }
        }
        t
    });
    (dm, dl)
}
