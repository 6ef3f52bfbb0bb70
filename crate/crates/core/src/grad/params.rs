use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, NodeId};
use super::tensor::Tensor2;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named parameters with Adam moment buffers.
///
/// Parameter values are kept at 32-bit precision: they are rounded through
/// `f32` at initialization and after every update, so a checkpoint written
/// as `f32` reloads bit-identically. Moments and all arithmetic stay `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor2>,
    first: Vec<Tensor2>,
    second: Vec<Tensor2>,
    step: u64,
}

fn round_f32(t: &mut Tensor2) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), first: Vec::new(), second: Vec::new(), step: 0 }
    }

    /// Adds a parameter and returns its index.
    pub fn insert(&mut self, name: impl Into<String>, mut value: Tensor2) -> usize {
        round_f32(&mut value);
        let (r, c) = value.shape();
        self.names.push(name.into());
        self.values.push(value);
        self.first.push(Tensor2::zeros(r, c));
        self.second.push(Tensor2::zeros(r, c));
        self.values.len() - 1
    }

    /// Glorot-uniform weights `fan_in x fan_out` and zero bias; returns the
    /// `(weight, bias)` indices.
    pub fn insert_dense<R: Rng>(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> (usize, usize) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        let w = self.insert(format!("{prefix}.w"), Tensor2::new(fan_in, fan_out, w).expect("dense shape"));
        let b = self.insert(format!("{prefix}.b"), Tensor2::zeros(1, fan_out));
        (w, b)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, idx: usize) -> &Tensor2 {
        &self.values[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Places every parameter on `graph` as a leaf.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        BoundParams { nodes: self.values.iter().map(|v| graph.leaf(v.clone())).collect() }
    }

    /// One Adam update with bias correction. `grads[i]` pairs with parameter
    /// `i`.
    pub fn adam_step(&mut self, grads: &[Tensor2], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.values.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), self.values.len())));
        }
        for (g, v) in grads.iter().zip(&self.values) {
            if g.shape() != v.shape() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), v.shape())));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((value, m), v), g) in self.values.iter_mut().zip(&mut self.first).zip(&mut self.second).zip(grads) {
            for (((p, m), v), &g) in value.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = (*p - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps)) as f32 as f64;
            }
        }
        Ok(())
    }

    /// Replaces parameter values, e.g. when loading a checkpoint. Moments are
    /// reset.
    pub fn from_named(named: Vec<(String, Tensor2)>) -> Self {
        let mut p = Self::new();
        for (n, v) in named {
            p.insert(n, v);
        }
        p
    }
}

/// Graph nodes of a [`ParamSet`] bound to one graph.
pub struct BoundParams {
    nodes: Vec<NodeId>,
}

impl BoundParams {
    pub fn node(&self, idx: usize) -> NodeId {
        self.nodes[idx]
    }

    /// Gradients in parameter order.
    pub fn gradients(&self, grads: &mut Gradients) -> Vec<Tensor2> {
        self.nodes.iter().map(|&n| grads.take(n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor2::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        let before = p.value(0).clone();
        for _ in 0..10 {
            p.adam_step(&[Tensor2::zeros(1, 3)], &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.value(0), &before);
        assert_eq!(p.step(), 10);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        // Scalar simulation: with a constant gradient the bias-corrected
        // moments are exactly g and g^2, so each step moves lr * g/(|g|+eps).
        let cfg = AdamConfig { lr: 1e-2, ..AdamConfig::default() };
        let mut p = ParamSet::new();
        p.insert("w", Tensor2::scalar(1.0));
        let mut expected = 1.0f64;
        for _ in 0..200 {
            p.adam_step(&[Tensor2::scalar(3.0)], &cfg).unwrap();
            expected = (expected - cfg.lr * 3.0 / (3.0 + cfg.eps)) as f32 as f64;
        }
        let got = p.value(0).item();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        assert!((got - (1.0 - 200.0 * 1e-2)).abs() < 1e-4);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut rng = crate::rng::stream(4, 0);
            let mut p = ParamSet::new();
            p.insert_dense("l", 3, 2, &mut rng);
            for s in 0..5 {
                let g = vec![Tensor2::filled(3, 2, s as f64 - 2.0), Tensor2::filled(1, 2, 0.3)];
                p.adam_step(&g, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn values_are_f32_representable() {
        let mut rng = crate::rng::stream(1, 0);
        let mut p = ParamSet::new();
        p.insert_dense("l", 4, 4, &mut rng);
        p.adam_step(&[Tensor2::filled(4, 4, 0.1), Tensor2::filled(1, 4, 0.1)], &AdamConfig::default()).unwrap();
        for (_, t) in p.iter() {
            assert!(t.data().iter().all(|&v| v as f32 as f64 == v));
        }
    }
}
