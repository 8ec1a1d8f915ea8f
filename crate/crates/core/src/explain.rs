//! Shapley attributions for row models under the interventional value
//! function `v(S) = mean_b f(x_S, b_rest)` over a background set.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{RegressionTree, TreeNode};

/// Largest feature count accepted by [`shap_exact`].
pub const MAX_EXACT_FEATURES: usize = 14;
/// Largest feature count accepted by the permutation estimators.
pub const MAX_SAMPLED_FEATURES: usize = 128;
pub const DEFAULT_BACKGROUND_ROWS: usize = 256;
pub const DEFAULT_PERMUTATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    rows: Array2<f64>,
}

impl BackgroundSet {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::InvalidArgument("background set must be non-empty".into()));
        }
        Ok(Self { rows })
    }

    /// At most `max_rows` rows drawn without replacement, kept in their
    /// original order.
    pub fn subsample(rows: &Array2<f64>, max_rows: usize, seed: u64) -> Result<Self> {
        if rows.nrows() <= max_rows {
            return Self::new(rows.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, rows.nrows(), max_rows).into_vec();
        idx.sort_unstable();
        Self::new(rows.select(ndarray::Axis(0), &idx))
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn n_features(&self) -> usize {
        self.rows.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapResult {
    pub instance_id: String,
    pub instance: Vec<f64>,
    pub base_value: f64,
    pub phi: Vec<f64>,
    /// Standard error per feature; absent for exact results.
    pub std_err: Option<Vec<f64>>,
}

/// Memoized value function for one instance.
struct Coalitions<'a, F> {
    model: &'a F,
    instance: ArrayView1<'a, f64>,
    background: &'a BackgroundSet,
    cache: HashMap<u128, f64>,
    buf: Array1<f64>,
}

impl<'a, F: Fn(ArrayView1<f64>) -> f64> Coalitions<'a, F> {
    fn new(model: &'a F, instance: ArrayView1<'a, f64>, background: &'a BackgroundSet) -> Result<Self> {
        if instance.len() != background.n_features() {
            return Err(Error::Shape(format!(
                "instance has {} features, background has {}",
                instance.len(),
                background.n_features()
            )));
        }
        Ok(Self {
            model,
            instance,
            background,
            cache: HashMap::new(),
            buf: Array1::zeros(instance.len()),
        })
    }

    fn value(&mut self, mask: u128) -> f64 {
        if let Some(&v) = self.cache.get(&mask) {
            return v;
        }
        let mut total = 0.0;
        for b in self.background.rows.rows() {
            for (j, z) in self.buf.iter_mut().enumerate() {
                *z = if mask >> j & 1 == 1 { self.instance[j] } else { b[j] };
            }
            total += (self.model)(self.buf.view());
        }
        let v = total / self.background.rows.nrows() as f64;
        self.cache.insert(mask, v);
        v
    }
}

/// Exact Shapley values by enumerating all `2^p` coalitions.
pub fn shap_exact<F>(model: &F, instance: ArrayView1<f64>, background: &BackgroundSet) -> Result<ShapResult>
where
    F: Fn(ArrayView1<f64>) -> f64,
{
    let p = instance.len();
    if p > MAX_EXACT_FEATURES {
        return Err(Error::InvalidArgument(format!(
            "{p} features is too many for exact enumeration (max {MAX_EXACT_FEATURES}); use permutation sampling"
        )));
    }
    let mut game = Coalitions::new(model, instance, background)?;
    let values: Vec<f64> = (0..1u128 << p).map(|m| game.value(m)).collect();
    let fact: Vec<f64> = (0..=p).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    }).collect();
    let weight: Vec<f64> = (0..p).map(|s| fact[s] * fact[p - s - 1] / fact[p]).collect();
    let mut phi = vec![0.0; p];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let bit = 1usize << j;
        for (mask, &v) in values.iter().enumerate() {
            if mask & bit == 0 {
                let diff = values[mask | bit] - v;
                if diff != 0.0 {
                    *phi_j += weight[mask.count_ones() as usize] * diff;
                }
            }
        }
    }
    Ok(ShapResult {
        instance_id: String::new(),
        instance: instance.to_vec(),
        base_value: values[0],
        phi,
        std_err: None,
    })
}

/// Averages marginal contributions along the given feature orderings.
pub fn shap_with_permutations<F>(
    model: &F,
    instance: ArrayView1<f64>,
    background: &BackgroundSet,
    permutations: &[Vec<usize>],
) -> Result<ShapResult>
where
    F: Fn(ArrayView1<f64>) -> f64,
{
    let p = instance.len();
    if p > MAX_SAMPLED_FEATURES {
        return Err(Error::InvalidArgument(format!("at most {MAX_SAMPLED_FEATURES} features supported, got {p}")));
    }
    if permutations.is_empty() {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let mut game = Coalitions::new(model, instance, background)?;
    let base_value = game.value(0);
    let mut sum = vec![0.0; p];
    let mut sum_sq = vec![0.0; p];
    for perm in permutations {
        let mut seen = vec![false; p];
        if perm.len() != p || perm.iter().any(|&j| j >= p || std::mem::replace(&mut seen[j], true)) {
            return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation of 0..{p}")));
        }
        let mut mask = 0u128;
        let mut prev = base_value;
        for &j in perm {
            mask |= 1 << j;
            let v = game.value(mask);
            let d = v - prev;
            sum[j] += d;
            sum_sq[j] += d * d;
            prev = v;
        }
    }
    let n = permutations.len() as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_err = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, sq)| {
            if permutations.len() < 2 {
                return 0.0;
            }
            let var = ((sq - s * s / n) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(ShapResult {
        instance_id: String::new(),
        instance: instance.to_vec(),
        base_value,
        phi,
        std_err: Some(std_err),
    })
}

/// Permutation-sampling estimate with `n_permutations` random orderings.
pub fn shap_sample<F>(
    model: &F,
    instance: ArrayView1<f64>,
    background: &BackgroundSet,
    n_permutations: usize,
    seed: u64,
) -> Result<ShapResult>
where
    F: Fn(ArrayView1<f64>) -> f64,
{
    if n_permutations == 0 {
        return Err(Error::InvalidArgument("n_permutations must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base: Vec<usize> = (0..instance.len()).collect();
    let perms: Vec<Vec<usize>> = (0..n_permutations)
        .map(|_| {
            base.shuffle(&mut rng);
            base.clone()
        })
        .collect();
    shap_with_permutations(model, instance, background, &perms)
}

/// Every ordering of `0..p` in lexicographic order.
pub fn all_permutations(p: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                rec(prefix, used, out);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(p), &mut vec![false; p], &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapMode {
    Exact,
    Sample { n_permutations: usize },
    /// Exact when the feature count allows it, sampling otherwise.
    Auto { n_permutations: usize },
}

/// Explains every row of `instances`; row `k` uses a seed derived from
/// `seed` and `k`, so results do not depend on thread scheduling.
pub fn explain_rows<F>(
    model: &F,
    instances: &Array2<f64>,
    ids: &[String],
    background: &BackgroundSet,
    mode: ShapMode,
    seed: u64,
) -> Result<Vec<ShapResult>>
where
    F: Fn(ArrayView1<f64>) -> f64 + Sync,
{
    if ids.len() != instances.nrows() {
        return Err(Error::Shape(format!("{} ids for {} instances", ids.len(), instances.nrows())));
    }
    let p = instances.ncols();
    (0..instances.nrows())
        .into_par_iter()
        .map(|k| {
            let x = instances.row(k);
            let row_seed = seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut r = match mode {
                ShapMode::Exact => shap_exact(model, x, background),
                ShapMode::Auto { .. } if p <= MAX_EXACT_FEATURES => shap_exact(model, x, background),
                ShapMode::Sample { n_permutations } | ShapMode::Auto { n_permutations } => {
                    shap_sample(model, x, background, n_permutations, row_seed)
                }
            }?;
            r.instance_id = ids[k].clone();
            Ok(r)
        })
        .collect()
}

/// One tree of an additive ensemble. It contributes
/// `weight * tree(z)` where `z[k] = x[feature_map[k]]`.
#[derive(Debug, Clone)]
pub struct TreeTerm<'a> {
    pub tree: &'a RegressionTree,
    pub weight: f64,
    pub feature_map: Vec<usize>,
}

impl TreeTerm<'_> {
    fn eval(&self, x: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.tree.nodes[i] {
                TreeNode::Leaf { value, .. } => return self.weight * value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[self.feature_map[feature]] <= threshold { left } else { right },
            }
        }
    }
}

/// Walks one tree for an (instance, background row) pair. A leaf reached
/// with the features in `from_x` taken from the instance and those in
/// `from_b` taken from the background row is worth `value` exactly in the
/// coalitions containing all of `from_x` and none of `from_b`.
struct PathWalk<'a> {
    term: &'a TreeTerm<'a>,
    x: ArrayView1<'a, f64>,
    b: ArrayView1<'a, f64>,
    /// `coef[a][b] = (a-1)! b! / (a+b)!` for `a >= 1`.
    coef: &'a [Vec<f64>],
    phi: &'a mut [f64],
}

impl PathWalk<'_> {
    fn walk(&mut self, node: usize, from_x: u128, from_b: u128) {
        match self.term.tree.nodes[node] {
            TreeNode::Leaf { value, .. } => {
                let (na, nb) = (from_x.count_ones() as usize, from_b.count_ones() as usize);
                let v = self.term.weight * value;
                if na > 0 {
                    let gain = v * self.coef[na][nb];
                    for_each_bit(from_x, |j| self.phi[j] += gain);
                }
                if nb > 0 {
                    let loss = v * self.coef[nb][na];
                    for_each_bit(from_b, |j| self.phi[j] -= loss);
                }
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let j = self.term.feature_map[feature];
                let bit = 1u128 << j;
                let x_next = if self.x[j] <= threshold { left } else { right };
                let b_next = if self.b[j] <= threshold { left } else { right };
                if from_x & bit != 0 || x_next == b_next {
                    self.walk(x_next, from_x, from_b);
                } else if from_b & bit != 0 {
                    self.walk(b_next, from_x, from_b);
                } else {
                    self.walk(x_next, from_x | bit, from_b);
                    self.walk(b_next, from_x, from_b | bit);
                }
            }
        }
    }
}

fn for_each_bit(mut mask: u128, mut f: impl FnMut(usize)) {
    while mask != 0 {
        f(mask.trailing_zeros() as usize);
        mask &= mask - 1;
    }
}

/// Exact interventional Shapley values of a tree ensemble. Each tree is
/// walked once per background row, so the cost does not grow with `2^p`.
/// Agrees with [`shap_exact`] on the equivalent row function.
pub fn shap_trees(terms: &[TreeTerm], instance: ArrayView1<f64>, background: &BackgroundSet) -> Result<ShapResult> {
    let p = instance.len();
    if p > MAX_SAMPLED_FEATURES {
        return Err(Error::InvalidArgument(format!("at most {MAX_SAMPLED_FEATURES} features supported, got {p}")));
    }
    if background.n_features() != p {
        return Err(Error::Shape(format!(
            "instance has {p} features, background has {}",
            background.n_features()
        )));
    }
    for t in terms {
        let width = t.tree.nodes.iter().fold(0, |w, n| match n {
            TreeNode::Split { feature, .. } => w.max(feature + 1),
            TreeNode::Leaf { .. } => w,
        });
        if t.feature_map.len() < width || t.feature_map.iter().any(|&j| j >= p) {
            return Err(Error::Shape(format!("feature map {:?} does not fit {p} features", t.feature_map)));
        }
    }
    // binom[n][k] then coef[a][b] = 1 / (a * C(a+b, a))
    let mut binom = vec![vec![1.0_f64; 2 * p + 1]; 2 * p + 1];
    for n in 1..=2 * p {
        for k in 1..n {
            binom[n][k] = binom[n - 1][k - 1] + binom[n - 1][k];
        }
    }
    let coef: Vec<Vec<f64>> = (0..=p)
        .map(|a| (0..=p).map(|b| if a == 0 { 0.0 } else { 1.0 / (a as f64 * binom[a + b][a]) }).collect())
        .collect();

    let rows = background.rows();
    let mut phi = vec![0.0; p];
    let mut base = 0.0;
    for b in rows.rows() {
        for term in terms {
            base += term.eval(b);
            PathWalk {
                term,
                x: instance,
                b,
                coef: &coef,
                phi: &mut phi,
            }
            .walk(0, 0, 0);
        }
    }
    let n = rows.nrows() as f64;
    phi.iter_mut().for_each(|v| *v /= n);
    Ok(ShapResult {
        instance_id: String::new(),
        instance: instance.to_vec(),
        base_value: base / n,
        phi,
        std_err: None,
    })
}

/// [`shap_trees`] over every row of `instances`.
pub fn explain_tree_rows(
    terms: &[TreeTerm],
    instances: &Array2<f64>,
    ids: &[String],
    background: &BackgroundSet,
) -> Result<Vec<ShapResult>> {
    if ids.len() != instances.nrows() {
        return Err(Error::Shape(format!("{} ids for {} instances", ids.len(), instances.nrows())));
    }
    (0..instances.nrows())
        .into_par_iter()
        .map(|k| {
            let mut r = shap_trees(terms, instances.row(k), background)?;
            r.instance_id = ids[k].clone();
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub feature: String,
    pub max_abs_phi: f64,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapPoint {
    pub instance_id: String,
    pub feature: String,
    pub feature_value: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShapSummary {
    /// Sorted by `max_abs_phi` descending, then by name.
    pub features: Vec<FeatureSummary>,
    pub points: Vec<ShapPoint>,
}

/// `ticket_price_i` and `ticket_price_j` both map to `ticket_price`.
pub fn pooled_name(name: &str) -> &str {
    name.strip_suffix("_i").or_else(|| name.strip_suffix("_j")).unwrap_or(name)
}

pub fn aggregate_shap(results: &[ShapResult], feature_names: &[String], pool: bool) -> Result<ShapSummary> {
    let p = feature_names.len();
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut points = Vec::new();
    for r in results {
        if r.phi.len() != p || r.instance.len() != p {
            return Err(Error::Shape(format!(
                "result for '{}' has {} attributions, expected {p}",
                r.instance_id,
                r.phi.len()
            )));
        }
        for (j, name) in feature_names.iter().enumerate() {
            let key = if pool { pooled_name(name) } else { name.as_str() };
            groups.entry(key).or_default().push(r.phi[j]);
            points.push(ShapPoint {
                instance_id: r.instance_id.clone(),
                feature: key.to_string(),
                feature_value: r.instance[j],
                phi: r.phi[j],
            });
        }
    }
    let mut features: Vec<FeatureSummary> = groups
        .into_iter()
        .map(|(name, phis)| FeatureSummary {
            feature: name.to_string(),
            max_abs_phi: phis.iter().fold(0.0, |m, v| m.max(v.abs())),
            mean_abs_phi: phis.iter().map(|v| v.abs()).sum::<f64>() / phis.len() as f64,
        })
        .collect();
    features.sort_by(|a, b| b.max_abs_phi.total_cmp(&a.max_abs_phi).then_with(|| a.feature.cmp(&b.feature)));
    Ok(ShapSummary { features, points })
}

pub fn write_shap_summary(path: &Path, summary: &ShapSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature", "max_abs_phi", "mean_abs_phi"])?;
    for f in &summary.features {
        w.serialize((&f.feature, f.max_abs_phi, f.mean_abs_phi))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_shap_points(path: &Path, summary: &ShapSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["instance_id", "feature", "feature_value", "phi"])?;
    for pt in &summary.points {
        w.serialize((&pt.instance_id, &pt.feature, pt.feature_value, pt.phi))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{fit_forest, ForestConfig};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn uniform_rows(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, p), || rng.random::<f64>())
    }

    #[test]
    fn linear_model_closed_form() {
        let bg = BackgroundSet::new(array![[1.0, 5.0], [3.0, -1.0]]).unwrap();
        let f = |x: ArrayView1<f64>| x[0];
        let r = shap_exact(&f, array![10.0, 7.0].view(), &bg).unwrap();
        assert_eq!(r.base_value, 2.0);
        assert_eq!(r.phi, vec![8.0, 0.0]);

        let g = |x: ArrayView1<f64>| 2.0 * x[0] - x[1];
        let r = shap_exact(&g, array![0.0, 0.0].view(), &bg).unwrap();
        assert!((r.phi[0] + 4.0).abs() < 1e-12 && (r.phi[1] - 2.0).abs() < 1e-12);
    }

    fn symmetrized_terms<'a>(forest: &'a crate::forest::Forest, swap: &[usize]) -> Vec<TreeTerm<'a>> {
        let w = 0.5 / forest.trees.len() as f64;
        let identity: Vec<usize> = (0..swap.len()).collect();
        forest
            .trees
            .iter()
            .flat_map(|tree| {
                [identity.clone(), swap.to_vec()].map(|feature_map| TreeTerm {
                    tree,
                    weight: w,
                    feature_map,
                })
            })
            .collect()
    }

    #[test]
    fn tree_walk_matches_enumeration() {
        let x = uniform_rows(150, 6, 11);
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] * r[2] + (r[1] - r[4]).abs() + 0.3 * r[5]).collect();
        let forest = fit_forest(&x, &y, &ForestConfig { n_estimators: 8, ..ForestConfig::default() }, 2).unwrap();
        let swap = [1, 0, 3, 2, 4, 5];
        let terms = symmetrized_terms(&forest, &swap);
        let model = |r: ArrayView1<f64>| {
            let s: Array1<f64> = swap.iter().map(|&k| r[k]).collect();
            0.5 * (forest.predict(r).unwrap() + forest.predict(s.view()).unwrap())
        };
        let bg = BackgroundSet::new(uniform_rows(40, 6, 12)).unwrap();
        for row in uniform_rows(10, 6, 13).rows() {
            let walked = shap_trees(&terms, row, &bg).unwrap();
            let exact = shap_exact(&model, row, &bg).unwrap();
            assert!((walked.base_value - exact.base_value).abs() < 1e-12);
            for (a, b) in walked.phi.iter().zip(&exact.phi) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            let total: f64 = walked.phi.iter().sum();
            assert!((walked.base_value + total - model(row)).abs() < 1e-9);
        }
    }

    #[test]
    fn tree_walk_guards() {
        let x = uniform_rows(30, 3, 0);
        let y: Vec<f64> = x.column(0).to_vec();
        let forest = fit_forest(&x, &y, &ForestConfig::default(), 0).unwrap();
        let bg = BackgroundSet::new(x.clone()).unwrap();
        let bad = [TreeTerm {
            tree: &forest.trees[0],
            weight: 1.0,
            feature_map: vec![0, 1, 7],
        }];
        assert!(shap_trees(&bad, x.row(0), &bg).is_err());
        let ok = [TreeTerm {
            tree: &forest.trees[0],
            weight: 1.0,
            feature_map: vec![0, 1, 2],
        }];
        assert!(shap_trees(&ok, Array1::zeros(2).view(), &bg).is_err());
        let rows = explain_tree_rows(&ok, &x, &["a".to_owned()], &bg);
        assert!(rows.is_err());
    }

    #[test]
    fn constant_model() {
        let bg = BackgroundSet::new(uniform_rows(10, 4, 0)).unwrap();
        let r = shap_exact(&|_: ArrayView1<f64>| 3.5, array![0.1, 0.2, 0.3, 0.4].view(), &bg).unwrap();
        assert!(r.phi.iter().all(|&p| p == 0.0));
        assert_eq!(r.base_value, 3.5);
    }

    #[test]
    fn guards() {
        let bg = BackgroundSet::new(uniform_rows(3, 15, 0)).unwrap();
        let f = |x: ArrayView1<f64>| x.sum();
        assert!(shap_exact(&f, Array1::zeros(15).view(), &bg).is_err());
        assert!(shap_exact(&f, Array1::zeros(3).view(), &bg).is_err());
        assert!(shap_sample(&f, Array1::zeros(15).view(), &bg, 0, 0).is_err());
        assert!(shap_with_permutations(&f, Array1::zeros(2).view(), &BackgroundSet::new(uniform_rows(3, 2, 0)).unwrap(), &[vec![0, 0]]).is_err());
        assert!(BackgroundSet::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn subsample_is_seeded_and_bounded() {
        let rows = uniform_rows(500, 3, 1);
        let a = BackgroundSet::subsample(&rows, 256, 9).unwrap();
        assert_eq!(a.rows().nrows(), 256);
        assert_eq!(a, BackgroundSet::subsample(&rows, 256, 9).unwrap());
        assert_eq!(BackgroundSet::subsample(&rows, 1000, 9).unwrap().rows(), &rows);
    }

    #[test]
    fn permutation_enumeration() {
        let perms = all_permutations(4);
        assert_eq!(perms.len(), 24);
        assert_eq!(perms[0], vec![0, 1, 2, 3]);
        assert_eq!(perms[23], vec![3, 2, 1, 0]);
    }

    #[test]
    fn forest_properties() {
        // feature 4 is constant in training, so no tree can split on it
        let mut x = uniform_rows(200, 5, 2);
        x.column_mut(4).fill(0.5);
        let y: Vec<f64> = x.rows().into_iter().map(|r| 4.0 * r[0] + r[1] * r[2] - r[3]).collect();
        let forest = fit_forest(&x, &y, &ForestConfig::default(), 3).unwrap();
        let model = |r: ArrayView1<f64>| forest.predict(r).unwrap();
        let bg = BackgroundSet::subsample(&x, 64, 0).unwrap();
        let mut probe = uniform_rows(5, 5, 4);
        probe.column_mut(4).fill(0.9);
        for q in probe.rows() {
            let exact = shap_exact(&model, q, &bg).unwrap();
            let total = exact.base_value + exact.phi.iter().sum::<f64>();
            assert!((total - model(q)).abs() < 1e-9);
            assert_eq!(exact.phi[4], 0.0);
            let all = shap_with_permutations(&model, q, &bg, &all_permutations(5)).unwrap();
            for (a, b) in all.phi.iter().zip(&exact.phi) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn duplicated_columns_share_credit() {
        let f = |x: ArrayView1<f64>| (x[0] + x[1]).powi(2) + x[2];
        let mut bg = uniform_rows(20, 3, 5);
        let c0 = bg.column(0).to_owned();
        bg.column_mut(1).assign(&c0);
        let bg = BackgroundSet::new(bg).unwrap();
        let r = shap_exact(&f, array![0.7, 0.7, 0.2].view(), &bg).unwrap();
        assert!((r.phi[0] - r.phi[1]).abs() < 1e-9);
    }

    #[test]
    fn sampling_is_deterministic_and_converges() {
        let x = uniform_rows(100, 4, 6);
        let f = |r: ArrayView1<f64>| r[0] * r[1] + (3.0 * r[2]).sin() - r[3] * r[0];
        let bg = BackgroundSet::new(x.clone()).unwrap();
        let q = array![0.9, 0.1, 0.4, 0.8];
        let a = shap_sample(&f, q.view(), &bg, 50, 1).unwrap();
        assert_eq!(a, shap_sample(&f, q.view(), &bg, 50, 1).unwrap());
        let exact = shap_exact(&f, q.view(), &bg).unwrap();
        let err = |r: &ShapResult| r.phi.iter().zip(&exact.phi).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let (mut small, mut large) = (0.0, 0.0);
        for s in 0..10 {
            small += err(&shap_sample(&f, q.view(), &bg, 10, s).unwrap());
            large += err(&shap_sample(&f, q.view(), &bg, 1000, s).unwrap());
        }
        assert!(large < small);
        assert!(a.std_err.unwrap().iter().all(|s| s.is_finite() && *s >= 0.0));
    }

    #[test]
    fn explain_rows_matches_direct_calls() {
        let x = uniform_rows(30, 3, 7);
        let f = |r: ArrayView1<f64>| r[0] - 2.0 * r[1] * r[2];
        let bg = BackgroundSet::new(x.clone()).unwrap();
        let ids: Vec<String> = (0..4).map(|i| format!("row{i}")).collect();
        let probe = x.slice(ndarray::s![..4, ..]).to_owned();
        let out = explain_rows(&f, &probe, &ids, &bg, ShapMode::Auto { n_permutations: 10 }, 0).unwrap();
        assert_eq!(out[2].instance_id, "row2");
        assert_eq!(out[2].phi, shap_exact(&f, probe.row(2), &bg).unwrap().phi);
    }

    fn result(id: &str, instance: Vec<f64>, phi: Vec<f64>) -> ShapResult {
        ShapResult {
            instance_id: id.into(),
            instance,
            base_value: 0.0,
            phi,
            std_err: None,
        }
    }

    #[test]
    fn aggregation() {
        let names: Vec<String> = ["ticket_price_i", "ticket_price_j", "distance"].map(String::from).to_vec();
        let rs = vec![
            result("a", vec![1.0, 2.0, 3.0], vec![0.5, -2.0, 1.0]),
            result("b", vec![4.0, 5.0, 6.0], vec![0.1, 0.3, -1.5]),
        ];
        let pooled = aggregate_shap(&rs, &names, true).unwrap();
        assert_eq!(pooled.features.len(), 2);
        assert_eq!(pooled.features[0].feature, "ticket_price");
        assert_eq!(pooled.features[0].max_abs_phi, 2.0);
        assert!((pooled.features[0].mean_abs_phi - 2.9 / 4.0).abs() < 1e-15);
        assert_eq!(pooled.points.len(), 6);

        let single = aggregate_shap(&rs[..1], &names, false).unwrap();
        let order: Vec<&str> = single.features.iter().map(|f| f.feature.as_str()).collect();
        assert_eq!(order, ["ticket_price_j", "distance", "ticket_price_i"]);
        assert_eq!(single.features[1].mean_abs_phi, 1.0);

        let zeros = aggregate_shap(&[result("z", vec![0.0; 3], vec![0.0; 3])], &names, false).unwrap();
        let order: Vec<&str> = zeros.features.iter().map(|f| f.feature.as_str()).collect();
        assert_eq!(order, ["distance", "ticket_price_i", "ticket_price_j"]);

        assert!(aggregate_shap(&rs, &names[..2], false).is_err());
    }

    #[test]
    fn csv_output() {
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = vec!["x_i".into(), "x_j".into()];
        let s = aggregate_shap(&[result("p1", vec![1.0, 2.0], vec![0.25, -0.5])], &names, false).unwrap();
        write_shap_summary(&dir.path().join("s.csv"), &s).unwrap();
        write_shap_points(&dir.path().join("p.csv"), &s).unwrap();
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert_eq!(text, "feature,max_abs_phi,mean_abs_phi\nx_j,0.5,0.5\nx_i,0.25,0.25\n");
        let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
        assert!(text.starts_with("instance_id,feature,feature_value,phi\np1,x_i,1.0,0.25\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn efficiency_holds(w in prop::collection::vec(-3.0f64..3.0, 4), seed in any::<u64>()) {
            let f = |x: ArrayView1<f64>| w[0] * x[0] * x[1] + w[1] * x[2].max(x[3]) + w[2] * x[1] + w[3];
            let bg = BackgroundSet::new(uniform_rows(12, 4, seed)).unwrap();
            let q = uniform_rows(1, 4, seed ^ 7);
            let r = shap_exact(&f, q.row(0), &bg).unwrap();
            prop_assert!((r.base_value + r.phi.iter().sum::<f64>() - f(q.row(0))).abs() < 1e-9);
        }
    }
}
