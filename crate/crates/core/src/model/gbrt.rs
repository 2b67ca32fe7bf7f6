//! Least-squares gradient boosting over depth-bounded regression trees.
//!
//! Splits are exact greedy searches over presorted raw feature values. Each
//! tree level is grown in one pass per feature: rows are visited in sorted
//! order and routed to the accumulator of the node they currently sit in.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Predictor};
use crate::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbrtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub subsample_rows: f64,
    pub seed: u64,
}

impl Default for GbrtParams {
    fn default() -> Self {
        GbrtParams {
            n_trees: 200,
            max_depth: 6,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            subsample_rows: 1.0,
            seed: 0,
        }
    }
}

impl GbrtParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field: &str, why: &str| Err(ModelError::InvalidParams(format!("{field}: {why}")));
        if self.max_depth == 0 {
            return bad("max_depth", "must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf", "must be at least 1");
        }
        if !(self.subsample_rows > 0.0 && self.subsample_rows <= 1.0) {
            return bad("subsample_rows", "must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Node of a fitted regression tree. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    fn predict_column_major(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if columns[*feature][row] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Fitted boosting model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbrtModel {
    pub base: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
    /// Total squared-error reduction contributed by each feature's splits.
    pub importances: Vec<f64>,
    /// Set when the fit fell back to the constant-mean model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    /// Training MSE after each stage, starting with the base model.
    #[serde(skip)]
    pub train_loss: Vec<f64>,
}

impl GbrtModel {
    pub fn constant(value: f64, n_features: usize, diagnostic: Option<String>) -> Self {
        GbrtModel {
            base: value,
            learning_rate: 0.0,
            n_features,
            trees: Vec::new(),
            importances: vec![0.0; n_features],
            diagnostic,
            train_loss: Vec::new(),
        }
    }
}

impl Predictor for GbrtModel {
    fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    fn feature_importances(&self) -> Vec<f64> {
        self.importances.clone()
    }
}

fn mse(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

/// Fits a boosting model to `(x, y)`.
///
/// Zero columns or constant `y` produce the constant-mean model with a
/// diagnostic instead of an error.
pub fn fit_gbrt(x: &Matrix, y: &[f64], params: &GbrtParams) -> Result<GbrtModel, ModelError> {
    params.validate()?;
    let n = y.len();
    if x.rows() != n {
        return Err(ModelError::ShapeMismatch { rows: x.rows(), targets: n });
    }
    if n < 2 * params.min_samples_leaf || n == 0 {
        return Err(ModelError::TooFewRows { got: n, need: (2 * params.min_samples_leaf).max(1) });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("target"));
    }
    let base = y.iter().sum::<f64>() / n as f64;
    if x.cols() == 0 {
        log::warn!("gbrt: no feature columns, using constant mean");
        return Ok(GbrtModel::constant(base, 0, Some("no feature columns".into())));
    }
    if y.iter().all(|&v| v == y[0]) {
        log::warn!("gbrt: constant target, using constant mean");
        return Ok(GbrtModel::constant(base, x.cols(), Some("constant target".into())));
    }

    let columns: Vec<Vec<f64>> = (0..x.cols()).map(|c| x.column(c)).collect();
    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("covariate"));
    }
    let sorted: Vec<Vec<u32>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let bag_size = ((params.subsample_rows * n as f64).round() as usize).clamp(2 * params.min_samples_leaf, n);
    let mut fitted = vec![base; n];
    let mut importances = vec![0.0; x.cols()];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut train_loss = Vec::with_capacity(params.n_trees + 1);
    train_loss.push(mse(y, &fitted));
    let mut residual = vec![0.0; n];

    for _ in 0..params.n_trees {
        for i in 0..n {
            residual[i] = y[i] - fitted[i];
        }
        let in_bag: Option<Vec<bool>> = (bag_size < n).then(|| {
            let mut mask = vec![false; n];
            for i in sample(&mut rng, n, bag_size) {
                mask[i] = true;
            }
            mask
        });
        let tree = TreeBuilder {
            columns: &columns,
            sorted: &sorted,
            residual: &residual,
            max_depth: params.max_depth,
            min_leaf: params.min_samples_leaf,
        }
        .build(in_bag.as_deref(), &mut importances);
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += params.learning_rate * tree.predict_column_major(&columns, i);
        }
        trees.push(tree);
        train_loss.push(mse(y, &fitted));
    }

    Ok(GbrtModel {
        base,
        learning_rate: params.learning_rate,
        n_features: x.cols(),
        trees,
        importances,
        diagnostic: None,
        train_loss,
    })
}

const NO_NODE: u32 = u32::MAX;

struct BuildNode {
    sum: f64,
    count: usize,
    depth: usize,
    split: Option<(usize, f64, usize, usize)>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Copy, Default)]
struct ScanState {
    sum: f64,
    count: usize,
    last: f64,
}

struct TreeBuilder<'a> {
    columns: &'a [Vec<f64>],
    sorted: &'a [Vec<u32>],
    residual: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
}

impl TreeBuilder<'_> {
    fn build(&self, in_bag: Option<&[bool]>, importances: &mut [f64]) -> TreeNode {
        let n = self.residual.len();
        let mut node_of = vec![0u32; n];
        let mut root = BuildNode { sum: 0.0, count: 0, depth: 0, split: None };
        for i in 0..n {
            if in_bag.is_some_and(|m| !m[i]) {
                node_of[i] = NO_NODE;
            } else {
                root.sum += self.residual[i];
                root.count += 1;
            }
        }
        let mut nodes = vec![root];
        let mut frontier: Vec<usize> = vec![0];

        while !frontier.is_empty() {
            frontier.retain(|&id| nodes[id].depth < self.max_depth && nodes[id].count >= 2 * self.min_leaf);
            if frontier.is_empty() {
                break;
            }
            let mut slot_of = vec![usize::MAX; nodes.len()];
            for (s, &id) in frontier.iter().enumerate() {
                slot_of[id] = s;
            }
            let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
            let mut scan = vec![ScanState::default(); frontier.len()];

            for (f, order) in self.sorted.iter().enumerate() {
                let col = &self.columns[f];
                scan.iter_mut().for_each(|s| *s = ScanState::default());
                for &r in order {
                    let nd = node_of[r as usize];
                    if nd == NO_NODE {
                        continue;
                    }
                    let slot = slot_of[nd as usize];
                    if slot == usize::MAX {
                        continue;
                    }
                    let v = col[r as usize];
                    let st = &mut scan[slot];
                    if st.count > 0 && v > st.last {
                        let node = &nodes[frontier[slot]];
                        let (nl, nr) = (st.count, node.count - st.count);
                        if nl >= self.min_leaf && nr >= self.min_leaf {
                            let sr = node.sum - st.sum;
                            let gain = st.sum * st.sum / nl as f64 + sr * sr / nr as f64
                                - node.sum * node.sum / node.count as f64;
                            if best[slot].is_none_or(|b| gain > b.gain) {
                                best[slot] = Some(Candidate { gain, feature: f, threshold: midpoint(st.last, v) });
                            }
                        }
                    }
                    st.count += 1;
                    st.sum += self.residual[r as usize];
                    st.last = v;
                }
            }

            let mut next = Vec::new();
            for (slot, &id) in frontier.iter().enumerate() {
                let Some(c) = best[slot] else { continue };
                if c.gain <= 1e-12 * nodes[id].sum.abs().max(1.0) {
                    continue;
                }
                importances[c.feature] += c.gain;
                let depth = nodes[id].depth + 1;
                let left = nodes.len();
                nodes.push(BuildNode { sum: 0.0, count: 0, depth, split: None });
                nodes.push(BuildNode { sum: 0.0, count: 0, depth, split: None });
                nodes[id].split = Some((c.feature, c.threshold, left, left + 1));
                next.push(left);
                next.push(left + 1);
            }
            if next.is_empty() {
                break;
            }
            for (i, slot) in node_of.iter_mut().enumerate() {
                if *slot == NO_NODE {
                    continue;
                }
                if let Some((f, thr, l, r)) = nodes[*slot as usize].split {
                    let child = if self.columns[f][i] <= thr { l } else { r };
                    *slot = child as u32;
                    nodes[child].sum += self.residual[i];
                    nodes[child].count += 1;
                }
            }
            frontier = next;
        }
        to_tree(&nodes, 0)
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

fn to_tree(nodes: &[BuildNode], id: usize) -> TreeNode {
    let node = &nodes[id];
    match node.split {
        Some((feature, threshold, l, r)) => TreeNode::Split {
            feature,
            threshold,
            left: Box::new(to_tree(nodes, l)),
            right: Box::new(to_tree(nodes, r)),
        },
        None => TreeNode::Leaf { value: if node.count > 0 { node.sum / node.count as f64 } else { 0.0 } },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Predictor;
    use rand::Rng;

    fn rmse(y: &[f64], f: &[f64]) -> f64 {
        mse(y, f).sqrt()
    }

    fn sd(y: &[f64]) -> f64 {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_row_major(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>()).collect())
    }

    #[test]
    fn zero_trees_predicts_mean() {
        let x = random_matrix(20, 3, 1);
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let m = fit_gbrt(&x, &y, &GbrtParams { n_trees: 0, ..Default::default() }).unwrap();
        assert_eq!(m.predict(&[0.3, 0.1, 0.9]), 9.5);
        assert_eq!(m.predict(&[100.0, -4.0, 2.0]), 9.5);
    }

    #[test]
    fn step_function_is_learned() {
        let x = random_matrix(200, 4, 2);
        let y: Vec<f64> = (0..200).map(|i| if x.get(i, 2) > 0.4 { 3.0 } else { -1.0 }).collect();
        let m = fit_gbrt(&x, &y, &GbrtParams { max_depth: 1, ..Default::default() }).unwrap();
        let pred = m.predict_matrix(&x);
        assert!(rmse(&y, &pred) < 1e-3 * sd(&y), "rmse {}", rmse(&y, &pred));
        let imp = m.feature_importances();
        assert!(imp[2] > 0.0 && imp.iter().enumerate().all(|(j, &v)| j == 2 || v == 0.0));
    }

    #[test]
    fn training_loss_never_increases() {
        for seed in 0..5 {
            let x = random_matrix(150, 5, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let y: Vec<f64> = (0..150)
                .map(|i| (x.get(i, 0) * 6.0).sin() + x.get(i, 1) * x.get(i, 3) + 0.3 * rng.random::<f64>())
                .collect();
            let m = fit_gbrt(&x, &y, &GbrtParams { n_trees: 60, max_depth: 3, ..Default::default() }).unwrap();
            assert_eq!(m.train_loss.len(), 61);
            for w in m.train_loss.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "loss rose {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn constant_target_falls_back() {
        let x = random_matrix(20, 2, 3);
        let m = fit_gbrt(&x, &[4.0; 20], &GbrtParams::default()).unwrap();
        assert!(m.diagnostic.is_some());
        assert_eq!(m.predict(&[0.5, 0.5]), 4.0);
        let empty = Matrix::zeros(20, 0);
        let y: Vec<f64> = (0..20).map(f64::from).collect();
        let m = fit_gbrt(&empty, &y, &GbrtParams::default()).unwrap();
        assert_eq!(m.predict(&[]), 9.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = random_matrix(6, 2, 4);
        assert!(matches!(
            fit_gbrt(&x, &[1.0; 5], &GbrtParams::default()),
            Err(ModelError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            fit_gbrt(&x, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &GbrtParams::default()),
            Err(ModelError::TooFewRows { .. })
        ));
        let p = GbrtParams { learning_rate: 0.0, ..Default::default() };
        assert!(matches!(fit_gbrt(&x, &[0.0; 6], &p), Err(ModelError::InvalidParams(_))));
    }

    #[test]
    fn deterministic_with_subsampling() {
        let x = random_matrix(100, 3, 5);
        let y: Vec<f64> = (0..100).map(|i| x.get(i, 0) + x.get(i, 1).powi(2)).collect();
        let p = GbrtParams { n_trees: 30, subsample_rows: 0.6, seed: 11, ..Default::default() };
        assert_eq!(fit_gbrt(&x, &y, &p).unwrap(), fit_gbrt(&x, &y, &p).unwrap());
    }

    #[test]
    fn respects_depth_and_leaf_size() {
        let x = random_matrix(64, 2, 6);
        let y: Vec<f64> = (0..64).map(|i| x.get(i, 0) * 10.0).collect();
        let m = fit_gbrt(&x, &y, &GbrtParams { n_trees: 5, max_depth: 2, min_samples_leaf: 10, ..Default::default() })
            .unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn tied_gains_pick_lowest_feature() {
        // Two identical columns: every split on column 1 ties with column 0.
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, i as f64]).collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<f64> = (0..40).map(|i| if i < 17 { 0.0 } else { 1.0 }).collect();
        let m = fit_gbrt(&x, &y, &GbrtParams { n_trees: 3, max_depth: 1, ..Default::default() }).unwrap();
        assert!(m.importances[0] > 0.0);
        assert_eq!(m.importances[1], 0.0);
        match &m.trees[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 16.5);
            }
            other => panic!("expected split, got {other:?}"),
        }
    }
}
