//! Random-forest classifier with Gini impurity and impurity-decrease feature
//! importance.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::argmax;
use crate::rng::{self, StreamRng};
use crate::vae::RepresentationMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    /// Features tried per node; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    /// A split is valid only if its impurity decrease, weighted by the
    /// node's share of the samples, reaches this value.
    pub min_impurity_decrease: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { trees: 10, max_depth: 8, max_features: None, bootstrap: true, min_impurity_decrease: 0.01 }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0
            || self.max_depth == 0
            || self.max_features == Some(0)
            || !(self.min_impurity_decrease >= 0.0)
        {
            return Err(Error::Config(format!("forest settings must be positive: {self:?}")));
        }
        Ok(())
    }

    fn features_per_node(&self, d: usize) -> usize {
        self.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { probs: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { probs } => return probs,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<Tree>,
    classes: usize,
    /// Mean over trees of the weighted impurity decrease per feature.
    importance: Vec<f64>,
}

struct Builder<'a> {
    x: &'a RepresentationMatrix,
    y: &'a [usize],
    classes: usize,
    config: &'a ForestConfig,
    root_size: f64,
    importance: Vec<f64>,
    nodes: Vec<Node>,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    decrease: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0usize; self.classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best threshold on one feature by a sorted sweep, maintaining the sum
    /// of squared class counts on each side.
    fn best_on_feature(&self, idx: &[usize], feature: usize, parent: &[usize]) -> Option<(f64, f64, usize)> {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| self.x.get(a, feature).total_cmp(&self.x.get(b, feature)));
        let n = order.len();
        let mut left = vec![0usize; self.classes];
        let mut right = parent.to_vec();
        let mut sq_left = 0.0f64;
        let mut sq_right: f64 = right.iter().map(|&c| (c * c) as f64).sum();
        let parent_gini = gini(parent, n);
        let mut best: Option<(f64, f64, usize)> = None;
        for pos in 0..n - 1 {
            let c = self.y[order[pos]];
            sq_left += (2 * left[c] + 1) as f64;
            left[c] += 1;
            sq_right -= (2 * right[c] - 1) as f64;
            right[c] -= 1;
            let v = self.x.get(order[pos], feature);
            if v == self.x.get(order[pos + 1], feature) {
                continue;
            }
            let (nl, nr) = ((pos + 1) as f64, (n - pos - 1) as f64);
            let weighted = (nl - sq_left / nl) + (nr - sq_right / nr);
            let decrease = parent_gini - weighted / n as f64;
            if best.is_none_or(|(d, _, _)| decrease > d) {
                best = Some((decrease, v, pos + 1));
            }
        }
        best
    }

    /// Features are visited in random order. The best valid split among the
    /// first `max_features` wins; if none of them is valid the search goes on
    /// one feature at a time until a valid split turns up.
    fn best_split(&self, idx: &[usize], parent: &[usize], rng: &mut StreamRng) -> Option<SplitChoice> {
        let d = self.x.cols();
        let order = sample(rng, d, d).into_vec();
        let weight = idx.len() as f64 / self.root_size;
        let mut best: Option<(f64, usize, f64)> = None;
        for (visited, &f) in order.iter().enumerate() {
            if visited >= self.config.features_per_node(d) && best.is_some() {
                break;
            }
            if let Some((dec, thr, _)) = self.best_on_feature(idx, f, parent) {
                let valid = weight * dec >= self.config.min_impurity_decrease && dec > 0.0;
                if valid && best.is_none_or(|(bd, bf, _)| dec > bd || (dec == bd && f < bf)) {
                    best = Some((dec, f, thr));
                }
            }
        }
        let (decrease, feature, threshold) = best?;
        let (left, right) = idx.iter().partition(|&&i| self.x.get(i, feature) <= threshold);
        Some(SplitChoice { feature, threshold, decrease, left, right })
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut StreamRng) -> usize {
        let counts = self.counts(&idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let id = self.nodes.len();
        let n = idx.len();
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n.max(1) as f64).collect();
        self.nodes.push(Node::Leaf { probs });
        if pure || depth >= self.config.max_depth || n < 2 {
            return id;
        }
        let Some(split) = self.best_split(&idx, &counts, rng) else {
            return id;
        };
        self.importance[split.feature] += n as f64 / self.root_size * split.decrease;
        let left = self.grow(split.left, depth + 1, rng);
        let right = self.grow(split.right, depth + 1, rng);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

impl RandomForest {
    /// Fits a forest predicting `y` (values below `classes`) from the rows of
    /// `x`.
    pub fn fit(
        x: &RepresentationMatrix,
        y: &[usize],
        classes: usize,
        config: &ForestConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if x.rows() != y.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", x.rows(), y.len())));
        }
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::Validation("forest needs at least one sample and one feature".into()));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
            return Err(Error::Validation(format!("label {bad} out of range for {classes} classes")));
        }
        let n = x.rows();
        let mut trees = Vec::with_capacity(config.trees);
        let mut importance = vec![0.0; x.cols()];
        for t in 0..config.trees {
            let mut r = rng::stream(seed, t as u64);
            let idx: Vec<usize> =
                if config.bootstrap { (0..n).map(|_| r.random_range(0..n)).collect() } else { (0..n).collect() };
            let mut b = Builder {
                x,
                y,
                classes,
                config,
                root_size: n as f64,
                importance: vec![0.0; x.cols()],
                nodes: Vec::new(),
            };
            b.grow(idx, 0, &mut r);
            for (acc, v) in importance.iter_mut().zip(&b.importance) {
                *acc += v / config.trees as f64;
            }
            trees.push(Tree { nodes: b.nodes });
        }
        Ok(Self { trees, classes, importance })
    }

    pub fn importance(&self) -> &[f64] {
        &self.importance
    }

    /// Class probabilities averaged over trees.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.classes];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.leaf(x)) {
                *acc += v;
            }
        }
        p.iter_mut().for_each(|v| *v /= self.trees.len() as f64);
        p
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }

    pub fn accuracy(&self, x: &RepresentationMatrix, y: &[usize]) -> f64 {
        if y.is_empty() {
            return 0.0;
        }
        let hits = (0..x.rows()).filter(|&i| self.predict(x.row(i)) == y[i]).count();
        hits as f64 / y.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bit_data() -> (RepresentationMatrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..400 {
            let a = (i % 2) as f64;
            let b = ((i / 2) % 2) as f64;
            let noise = ((i * 7919) % 101) as f64 / 101.0;
            rows.push(vec![a, b, noise]);
            y.push((2.0 * a + b) as usize);
        }
        (RepresentationMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn gini_of_pure_and_even_nodes() {
        assert_eq!(gini(&[5, 0], 5), 0.0);
        assert!((gini(&[5, 5], 10) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn learns_two_bits_and_ignores_noise() {
        let (x, y) = two_bit_data();
        let cfg = ForestConfig { max_features: Some(3), ..ForestConfig::default() };
        let f = RandomForest::fit(&x, &y, 4, &cfg, 1).unwrap();
        assert_eq!(f.accuracy(&x, &y), 1.0);
        let imp = f.importance();
        assert!(imp[0] > 5.0 * imp[2] && imp[1] > 5.0 * imp[2], "{imp:?}");
    }

    #[test]
    fn constant_features_give_no_splits() {
        let x = RepresentationMatrix::new(10, 2, vec![1.0; 20]).unwrap();
        let y: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let f = RandomForest::fit(&x, &y, 3, &ForestConfig::default(), 0).unwrap();
        assert_eq!(f.importance(), &[0.0, 0.0]);
    }

    #[test]
    fn fit_is_seeded() {
        let (x, y) = two_bit_data();
        let a = RandomForest::fit(&x, &y, 4, &ForestConfig::default(), 4).unwrap();
        assert_eq!(a, RandomForest::fit(&x, &y, 4, &ForestConfig::default(), 4).unwrap());
    }

    #[test]
    fn rejects_bad_labels() {
        let (x, mut y) = two_bit_data();
        y[0] = 5;
        assert!(RandomForest::fit(&x, &y, 4, &ForestConfig::default(), 0).is_err());
    }
}
