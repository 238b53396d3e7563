//! Regression trees (CART), random forests, gradient-boosted trees and
//! linear-model decision trees.
//!
//! A sample goes to the left child of a split `(i, v)` iff `x[i] < v`.
//! Candidate thresholds are midpoints between consecutive sorted unique
//! values; the best split maximizes the reduction in squared error, ties
//! going to the lowest feature index and then the lowest threshold.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::rng::stream;

const LMDT_RIDGE: f64 = 1e-6;
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leaf {
    Constant { value: f64 },
    Linear { coef: Vec<f64>, intercept: f64 },
}

impl Leaf {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Leaf::Constant { value } => *value,
            Leaf::Linear { coef, intercept } => intercept + coef.iter().zip(x).map(|(a, v)| a * v).sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf(Leaf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub n_features: usize,
    pub root: TreeNode,
}

impl Tree {
    pub fn leaf(&self, x: &[f64]) -> &Leaf {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf(l) => return l,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x[*feature] < *threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.leaf(x).eval(x)
    }

    pub fn depth(&self) -> usize {
        fn go(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&Leaf> {
        fn go<'a>(n: &'a TreeNode, out: &mut Vec<&'a Leaf>) {
            match n {
                TreeNode::Leaf(l) => out.push(l),
                TreeNode::Split { left, right, .. } => {
                    go(left, out);
                    go(right, out);
                }
            }
        }
        let mut out = Vec::new();
        go(&self.root, &mut out);
        out
    }

    fn validate(&self) -> Result<(), ModelError> {
        fn go(n: &TreeNode, d: usize) -> Result<(), ModelError> {
            match n {
                TreeNode::Leaf(Leaf::Constant { value }) if value.is_finite() => Ok(()),
                TreeNode::Leaf(Leaf::Linear { coef, intercept })
                    if coef.len() == d && intercept.is_finite() && coef.iter().all(|c| c.is_finite()) =>
                {
                    Ok(())
                }
                TreeNode::Leaf(_) => Err(ModelError::Invalid("leaf payload not finite or wrong length".into())),
                TreeNode::Split { feature, threshold, left, right } => {
                    if *feature >= d || !threshold.is_finite() {
                        return Err(ModelError::Invalid("split feature or threshold invalid".into()));
                    }
                    go(left, d)?;
                    go(right, d)
                }
            }
        }
        go(&self.root, self.n_features)
    }
}

/// How member trees are combined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Combination {
    /// Uniform average (random forest).
    Average,
    /// `base_score + learning_rate * sum` (gradient boosting).
    Boosted { base_score: f64, learning_rate: f64 },
    /// Exactly one tree (CART or LMDT).
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub trees: Vec<Tree>,
    pub combination: Combination,
}

impl Ensemble {
    pub fn new(trees: Vec<Tree>, combination: Combination) -> Result<Self, ModelError> {
        let boosted = matches!(combination, Combination::Boosted { .. });
        if trees.is_empty() && !boosted {
            return Err(ModelError::Invalid("ensemble without trees".into()));
        }
        if matches!(combination, Combination::Single) && trees.len() != 1 {
            return Err(ModelError::Invalid("single-tree ensemble with several trees".into()));
        }
        if let Some(t) = trees.first() {
            if trees.iter().any(|u| u.n_features != t.n_features) {
                return Err(ModelError::Invalid("trees disagree on feature count".into()));
            }
        }
        for t in &trees {
            t.validate()?;
        }
        Ok(Self { trees, combination })
    }

    pub fn n_features(&self) -> Option<usize> {
        self.trees.first().map(|t| t.n_features)
    }

    /// Weight of tree outputs and additive constant of the combination.
    pub fn weights(&self) -> (f64, f64) {
        match self.combination {
            Combination::Average => (1.0 / self.trees.len() as f64, 0.0),
            Combination::Boosted { base_score, learning_rate } => (learning_rate, base_score),
            Combination::Single => (1.0, 0.0),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let sum = self.trees.iter().map(|t| t.predict(x)).sum::<f64>();
        match self.combination {
            Combination::Average => sum / self.trees.len() as f64,
            Combination::Boosted { base_score, learning_rate } => base_score + learning_rate * sum,
            Combination::Single => sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { max_depth: 5, min_samples_split: 2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub max_features_fraction: f64,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 15, max_depth: 5, min_samples_split: 2, max_features_fraction: 1.0, bootstrap: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self { n_estimators: 15, learning_rate: 0.2, max_depth: 5, min_samples_split: 2, seed: 0 }
    }
}

struct Grower<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    max_depth: usize,
    min_samples_split: usize,
    n_split_features: usize,
    rng: R,
    linear_leaves: bool,
}

impl<'a, R: Rng> Grower<'a, R> {
    fn sse(&self, idx: &[usize]) -> f64 {
        let n = idx.len() as f64;
        let s: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let s2: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        (s2 - s * s / n).max(0.0)
    }

    /// Best `(feature, threshold, gain)` for the rows `idx`.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        if self.n_split_features < d {
            features.shuffle(&mut self.rng);
            features.truncate(self.n_split_features);
            features.sort_unstable();
        }
        let parent = self.sse(idx);
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total2: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let n = idx.len();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for &f in &features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let (mut s, mut s2) = (0.0, 0.0);
            for k in 0..n - 1 {
                let yi = self.y[order[k]];
                s += yi;
                s2 += yi * yi;
                let (va, vb) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if va == vb {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let left = s2 - s * s / nl;
                let right = (total2 - s2) - (total - s) * (total - s) / nr;
                let gain = parent - left.max(0.0) - right.max(0.0);
                if gain > MIN_GAIN * parent.max(1.0) && best.map_or(true, |(_, _, g)| gain > g) {
                    best = Some((f, 0.5 * (va + vb), gain));
                }
            }
        }
        best
    }

    /// Model-tree split: minimizes the summed residual error of ridge fits in
    /// both children. Each child keeps at least `d + 1` rows.
    fn best_linear_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let d = self.x[0].len();
        let n = idx.len();
        let min_leaf = d + 1;
        if n < 2 * min_leaf {
            return None;
        }
        let full = GramStats::from_rows(self.x, self.y, idx);
        let parent = full.sse();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..d {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = GramStats::zeros(d);
            for k in 0..n - 1 {
                left.add(&self.x[order[k]], self.y[order[k]], 1.0);
                let (va, vb) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if va == vb || k + 1 < min_leaf || n - k - 1 < min_leaf {
                    continue;
                }
                let right = full.minus(&left);
                let gain = parent - left.sse() - right.sse();
                if gain > MIN_GAIN * parent.max(1.0) && best.map_or(true, |(_, _, g)| gain > g) {
                    best = Some((f, 0.5 * (va + vb), gain));
                }
            }
        }
        best
    }

    fn leaf(&self, idx: &[usize]) -> Result<Leaf, ModelError> {
        if idx.is_empty() {
            return Err(ModelError::EmptyData);
        }
        if self.linear_leaves {
            return Ok(ridge_leaf(self.x, self.y, idx));
        }
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        Ok(Leaf::Constant { value: mean })
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> Result<TreeNode, ModelError> {
        if depth >= self.max_depth || idx.len() < self.min_samples_split.max(2) {
            return Ok(TreeNode::Leaf(self.leaf(idx)?));
        }
        let split = if self.linear_leaves { self.best_linear_split(idx) } else { self.best_split(idx) };
        let Some((f, v, _)) = split else {
            return Ok(TreeNode::Leaf(self.leaf(idx)?));
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][f] < v);
        Ok(TreeNode::Split {
            feature: f,
            threshold: v,
            left: Box::new(self.grow(&l, depth + 1)?),
            right: Box::new(self.grow(&r, depth + 1)?),
        })
    }
}

/// Sufficient statistics of a least-squares fit on `[1, x]`.
#[derive(Clone)]
struct GramStats {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

impl GramStats {
    fn zeros(d: usize) -> Self {
        Self { xtx: DMatrix::zeros(d + 1, d + 1), xty: DVector::zeros(d + 1), yty: 0.0 }
    }

    fn from_rows(x: &[Vec<f64>], y: &[f64], idx: &[usize]) -> Self {
        let mut g = Self::zeros(x[0].len());
        for &i in idx {
            g.add(&x[i], y[i], 1.0);
        }
        g
    }

    fn add(&mut self, x: &[f64], y: f64, w: f64) {
        let d = x.len();
        let z = |p: usize| if p == 0 { 1.0 } else { x[p - 1] };
        for p in 0..=d {
            let zp = z(p);
            self.xty[p] += w * zp * y;
            for q in 0..=d {
                self.xtx[(p, q)] += w * zp * z(q);
            }
        }
        self.yty += w * y * y;
    }

    fn minus(&self, other: &GramStats) -> GramStats {
        GramStats { xtx: &self.xtx - &other.xtx, xty: &self.xty - &other.xty, yty: self.yty - other.yty }
    }

    /// Residual sum of squares of the ridge fit (intercept unpenalized).
    fn sse(&self) -> f64 {
        let mut a = self.xtx.clone();
        for p in 1..a.nrows() {
            a[(p, p)] += LMDT_RIDGE;
        }
        let Some(ch) = a.cholesky() else {
            return f64::INFINITY;
        };
        let beta = ch.solve(&self.xty);
        let fit = self.yty - 2.0 * beta.dot(&self.xty) + beta.dot(&(&self.xtx * &beta));
        fit.max(0.0)
    }
}

/// Ridge fit on centered data, unpenalized intercept.
fn ridge_leaf(x: &[Vec<f64>], y: &[f64], idx: &[usize]) -> Leaf {
    let d = x[0].len();
    let n = idx.len() as f64;
    let mut xm = vec![0.0; d];
    for &i in idx {
        for j in 0..d {
            xm[j] += x[i][j] / n;
        }
    }
    let ym = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for &i in idx {
        let c: Vec<f64> = (0..d).map(|j| x[i][j] - xm[j]).collect();
        for p in 0..d {
            b[p] += c[p] * (y[i] - ym);
            for q in 0..d {
                a[(p, q)] += c[p] * c[q];
            }
        }
    }
    for p in 0..d {
        a[(p, p)] += LMDT_RIDGE;
    }
    let coef: Vec<f64> = match a.cholesky() {
        Some(ch) => ch.solve(&b).iter().copied().collect(),
        None => vec![0.0; d],
    };
    let intercept = ym - coef.iter().zip(&xm).map(|(c, m)| c * m).sum::<f64>();
    Leaf::Linear { coef, intercept }
}

fn check(x: &[Vec<f64>], y: &[f64]) -> Result<(), ModelError> {
    if x.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if x.len() != y.len() {
        return Err(ModelError::Invalid("target length mismatch".into()));
    }
    Ok(())
}

fn grow_tree(
    x: &[Vec<f64>],
    y: &[f64],
    idx: &[usize],
    max_depth: usize,
    min_samples_split: usize,
    n_split_features: usize,
    linear_leaves: bool,
    rng: crate::rng::StreamRng,
) -> Result<Tree, ModelError> {
    let mut g = Grower { x, y, max_depth, min_samples_split, n_split_features, rng, linear_leaves };
    let root = g.grow(idx, 0)?;
    Ok(Tree { n_features: x[0].len(), root })
}

/// CART regression tree with constant leaves.
pub fn fit_tree(x: &[Vec<f64>], y: &[f64], cfg: &TreeConfig) -> Result<Tree, ModelError> {
    check(x, y)?;
    let idx: Vec<usize> = (0..x.len()).collect();
    let d = x[0].len();
    grow_tree(x, y, &idx, cfg.max_depth, cfg.min_samples_split, d, false, stream(cfg.seed, "cart"))
}

/// Random forest: tree `t` uses the `rf/tree/{t}` stream for its bootstrap
/// sample and per-split feature subsets.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Result<Ensemble, ModelError> {
    check(x, y)?;
    if cfg.n_trees == 0 {
        return Err(ModelError::Invalid("forest with zero trees".into()));
    }
    let n = x.len();
    let d = x[0].len();
    let k = ((cfg.max_features_fraction * d as f64).ceil() as usize).clamp(1, d);
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = stream(cfg.seed, &format!("rf/tree/{t}"));
        let idx: Vec<usize> = if cfg.bootstrap {
            let mut v: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            v.sort_unstable();
            v
        } else {
            (0..n).collect()
        };
        trees.push(grow_tree(x, y, &idx, cfg.max_depth, cfg.min_samples_split, k, false, rng)?);
    }
    Ensemble::new(trees, Combination::Average)
}

/// Least-squares gradient boosting from the target mean.
pub fn fit_gbt(x: &[Vec<f64>], y: &[f64], cfg: &GbtConfig) -> Result<Ensemble, ModelError> {
    check(x, y)?;
    let n = x.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let idx: Vec<usize> = (0..n).collect();
    let d = x[0].len();
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    for s in 0..cfg.n_estimators {
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, p)| a - p).collect();
        let rng = stream(cfg.seed, &format!("gbt/stage/{s}"));
        let tree = grow_tree(x, &resid, &idx, cfg.max_depth, cfg.min_samples_split, d, false, rng)?;
        for (p, xi) in pred.iter_mut().zip(x) {
            *p += cfg.learning_rate * tree.predict(xi);
        }
        trees.push(tree);
    }
    Ensemble::new(trees, Combination::Boosted { base_score: base, learning_rate: cfg.learning_rate })
}

/// CART structure with a ridge-regularized linear model in every leaf.
pub fn fit_lmdt(x: &[Vec<f64>], y: &[f64], cfg: &TreeConfig) -> Result<Ensemble, ModelError> {
    check(x, y)?;
    let idx: Vec<usize> = (0..x.len()).collect();
    let d = x[0].len();
    let tree = grow_tree(x, y, &idx, cfg.max_depth, cfg.min_samples_split, d, true, stream(cfg.seed, "lmdt"))?;
    Ensemble::new(vec![tree], Combination::Single)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_split_is_the_midpoint() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![0.0, 10.0];
        let t = fit_tree(&x, &y, &TreeConfig { max_depth: 1, ..Default::default() }).unwrap();
        match &t.root {
            TreeNode::Split { feature: 0, threshold, .. } => assert_eq!(*threshold, 0.5),
            other => panic!("{other:?}"),
        }
        assert_eq!(t.predict(&[0.0]), 0.0);
        assert_eq!(t.predict(&[1.0]), 10.0);
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // Both features separate the targets identically.
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let y = vec![1.0, 2.0];
        let t = fit_tree(&x, &y, &TreeConfig { max_depth: 1, ..Default::default() }).unwrap();
        assert!(matches!(t.root, TreeNode::Split { feature: 0, .. }));
    }
}
