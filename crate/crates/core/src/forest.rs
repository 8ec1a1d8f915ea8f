//! Regression forest (bootstrap + CART variance-reduction splits) and the
//! pair feature rows it is trained on.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `concat(f_i, f_j, d)`: length `2F + 1`.
pub fn pair_features_raw(f_i: ArrayView1<f64>, f_j: ArrayView1<f64>, distance: f64) -> Result<Array1<f64>> {
    if f_i.len() != f_j.len() {
        return Err(Error::Shape(format!(
            "feature vectors have different lengths ({} vs {})",
            f_i.len(),
            f_j.len()
        )));
    }
    Ok(concat_pair(f_i, f_j, distance))
}

/// `concat(E_i, E_j, d)`: length `2D + 1`.
pub fn pair_features_embed(e_i: ArrayView1<f64>, e_j: ArrayView1<f64>, distance: f64) -> Array1<f64> {
    concat_pair(e_i, e_j, distance)
}

fn concat_pair(a: ArrayView1<f64>, b: ArrayView1<f64>, d: f64) -> Array1<f64> {
    a.iter().chain(b.iter()).copied().chain(std::iter::once(d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaxFeatures {
    /// `ceil(p / 3)`
    Third,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, p: usize) -> usize {
        let k = match self {
            MaxFeatures::Third => p.div_ceil(3),
            MaxFeatures::All => p,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_estimators: 30,
            max_depth: 25,
            max_features: MaxFeatures::Third,
            min_samples_split: 2,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        samples: usize,
    },
}

/// Binary tree stored as a node table; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    /// Rows go left when `x[feature] <= threshold`.
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value, .. } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Indices of features used by at least one split.
    pub fn used_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, .. } => Some(*feature),
            TreeNode::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
    pub config: ForestConfig,
    pub n_features: usize,
    pub seed: u64,
}

impl Forest {
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Shape(format!(
                "forest expects rows of length {}, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn predict_rows(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        x.rows().into_iter().map(|r| self.predict(r)).collect()
    }
}

pub fn predict_forest(forest: &Forest, x: ArrayView1<f64>) -> Result<f64> {
    forest.predict(x)
}

/// Fits `n_estimators` trees, each on its own bootstrap sample and RNG
/// stream derived from `seed`. Trees are grown in parallel; the result
/// does not depend on scheduling.
pub fn fit_forest(x: &Array2<f64>, y: &[f64], config: &ForestConfig, seed: u64) -> Result<Forest> {
    let n = x.nrows();
    if n == 0 || y.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a forest on empty data".into()));
    }
    if n != y.len() {
        return Err(Error::Shape(format!("{n} rows but {} targets", y.len())));
    }
    if config.n_estimators == 0 {
        return Err(Error::InvalidArgument("n_estimators must be >= 1".into()));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("forest inputs must be finite".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let tree_seeds: Vec<u64> = (0..config.n_estimators).map(|_| master.random()).collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let sample: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            TreeBuilder { x, y, config, rng }.build(sample)
        })
        .collect();
    Ok(Forest {
        trees,
        config: config.clone(),
        n_features: x.ncols(),
        seed,
    })
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    config: &'a ForestConfig,
    rng: ChaCha8Rng,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn build(mut self, sample: Vec<usize>) -> RegressionTree {
        let mut nodes = Vec::new();
        self.grow(&mut nodes, sample, 0);
        RegressionTree { nodes }
    }

    fn grow(&mut self, nodes: &mut Vec<TreeNode>, idx: Vec<usize>, depth: usize) -> usize {
        let id = nodes.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        nodes.push(TreeNode::Leaf {
            value: mean,
            samples: idx.len(),
        });
        if depth >= self.config.max_depth || idx.len() < self.config.min_samples_split.max(2) {
            return id;
        }
        let Some(best) = self.best_split(&idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[[i, best.feature]] <= best.threshold);
        debug_assert!(!l.is_empty() && !r.is_empty() && best.gain > 0.0);
        let left = self.grow(nodes, l, depth + 1);
        let right = self.grow(nodes, r, depth + 1);
        nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Scans a random subset of features; if none of them yields a split
    /// that lowers the summed squared error, keeps scanning the rest.
    fn best_split(&mut self, idx: &[usize]) -> Option<SplitChoice> {
        let p = self.x.ncols();
        let mtry = self.config.max_features.resolve(p);
        let mut features: Vec<usize> = (0..p).collect();
        features.shuffle(&mut self.rng);

        let n = idx.len() as f64;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent_sse = (total_sq - total * total / n).max(0.0);
        if parent_sse <= 0.0 {
            return None;
        }
        let min_gain = parent_sse * 1e-12;

        let mut best: Option<SplitChoice> = None;
        let mut order: Vec<(f64, f64)> = Vec::with_capacity(idx.len());
        for (k, &f) in features.iter().enumerate() {
            if k >= mtry && best.is_some() {
                break;
            }
            order.clear();
            order.extend(idx.iter().map(|&i| (self.x[[i, f]], self.y[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for s in 0..order.len() - 1 {
                left_sum += order[s].1;
                if order[s].0 == order[s + 1].0 {
                    continue;
                }
                let nl = (s + 1) as f64;
                let nr = n - nl;
                let right_sum = total - left_sum;
                // SSE reduction = nl*mean_l^2 + nr*mean_r^2 - n*mean^2
                let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n;
                if gain > min_gain && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = 0.5 * (order[s].0 + order[s + 1].0);
                    if threshold >= order[s + 1].0 {
                        threshold = order[s].0;
                    }
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn noisy_data(n: usize, p: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, p), || rng.random::<f64>());
        let y = x
            .rows()
            .into_iter()
            .map(|r| 3.0 * r[0] - 2.0 * r[1 % p] + rng.random::<f64>())
            .collect();
        (x, y)
    }

    #[test]
    fn pair_rows() {
        let f = Array1::from(vec![0.1; 10]);
        let row = pair_features_raw(f.view(), f.view(), 0.0).unwrap();
        assert_eq!(row.len(), 21);
        assert_eq!(row.slice(ndarray::s![..10]), f);
        assert_eq!(row[20], 0.0);
        let a = array![1.0, 2.0];
        let b = array![3.0, 4.0];
        assert_eq!(pair_features_raw(a.view(), b.view(), 0.5).unwrap(), array![1.0, 2.0, 3.0, 4.0, 0.5]);
        assert_eq!(pair_features_raw(b.view(), a.view(), 0.5).unwrap(), array![3.0, 4.0, 1.0, 2.0, 0.5]);
        assert!(pair_features_raw(a.view(), array![1.0].view(), 0.0).is_err());
        let e = Array1::<f64>::zeros(500);
        let row = pair_features_embed(e.view(), e.view(), 0.0);
        assert_eq!(row.len(), 1001);
        assert!(row.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_target() {
        let (x, _) = noisy_data(40, 3, 1);
        let forest = fit_forest(&x, &[7.5; 40], &ForestConfig::default(), 0).unwrap();
        for r in x.rows() {
            assert_eq!(forest.predict(r).unwrap(), 7.5);
        }
    }

    #[test]
    fn single_unrestricted_tree_interpolates() {
        let (x, y) = noisy_data(60, 4, 2);
        let cfg = ForestConfig {
            n_estimators: 1,
            max_depth: usize::MAX,
            max_features: MaxFeatures::All,
            min_samples_split: 2,
            bootstrap: false,
        };
        let forest = fit_forest(&x, &y, &cfg, 0).unwrap();
        for (r, t) in x.rows().into_iter().zip(&y) {
            assert_eq!(forest.predict(r).unwrap(), *t);
        }
    }

    #[test]
    fn deterministic_and_parallel_safe() {
        let (x, y) = noisy_data(80, 5, 3);
        let a = fit_forest(&x, &y, &ForestConfig::default(), 11).unwrap();
        let b = fit_forest(&x, &y, &ForestConfig::default(), 11).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&x, &y, &ForestConfig::default(), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn errors() {
        assert!(fit_forest(&Array2::zeros((0, 2)), &[], &ForestConfig::default(), 0).is_err());
        assert!(fit_forest(&Array2::zeros((3, 2)), &[1.0, 2.0], &ForestConfig::default(), 0).is_err());
        let (x, y) = noisy_data(10, 2, 0);
        let f = fit_forest(&x, &y, &ForestConfig::default(), 0).unwrap();
        assert!(f.predict(array![0.1].view()).is_err());
    }

    #[test]
    fn single_tree_forest_is_that_tree() {
        let (x, y) = noisy_data(30, 3, 4);
        let cfg = ForestConfig {
            n_estimators: 1,
            ..ForestConfig::default()
        };
        let f = fit_forest(&x, &y, &cfg, 5).unwrap();
        let r = x.row(3);
        assert_eq!(f.predict(r).unwrap(), f.trees[0].predict(r));
    }

    #[test]
    fn serde_round_trip() {
        let (x, y) = noisy_data(50, 3, 6);
        let f = fit_forest(&x, &y, &ForestConfig::default(), 1).unwrap();
        let back: Forest = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    fn sse(y: &[f64]) -> f64 {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - m).powi(2)).sum()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn structural_invariants(seed in any::<u64>(), depth in 1usize..8) {
            let (x, y) = noisy_data(60, 4, seed);
            let cfg = ForestConfig { n_estimators: 4, max_depth: depth, ..ForestConfig::default() };
            let f = fit_forest(&x, &y, &cfg, seed).unwrap();
            let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            for t in &f.trees {
                prop_assert!(t.depth() <= depth);
                for n in &t.nodes {
                    if let TreeNode::Leaf { samples, .. } = n {
                        prop_assert!(*samples >= 1);
                    }
                }
            }
            let mut probe = ChaCha8Rng::seed_from_u64(seed ^ 1);
            for _ in 0..20 {
                let q = Array1::from_shape_simple_fn(4, || probe.random_range(-1.0..2.0));
                let p = f.predict(q.view()).unwrap();
                prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
            }
            // splits on the full training set strictly lower the summed squared error
            let t = fit_forest(&x, &y, &ForestConfig { n_estimators: 1, bootstrap: false, ..cfg }, seed).unwrap();
            let tree = &t.trees[0];
            fn check(tree: &RegressionTree, i: usize, idx: Vec<usize>, x: &Array2<f64>, y: &[f64]) -> bool {
                match tree.nodes[i] {
                    TreeNode::Leaf { .. } => true,
                    TreeNode::Split { feature, threshold, left, right } => {
                        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&k| x[[k, feature]] <= threshold);
                        let ys = |v: &[usize]| v.iter().map(|&k| y[k]).collect::<Vec<_>>();
                        let ok = sse(&ys(&l)) + sse(&ys(&r)) < sse(&ys(&idx));
                        ok && check(tree, left, l, x, y) && check(tree, right, r, x, y)
                    }
                }
            }
            prop_assert!(check(tree, 0, (0..60).collect(), &x, &y));
        }
    }
}
