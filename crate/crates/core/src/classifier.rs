//! Gradient-boosted decision trees on logistic loss, plus ROC-AUC/accuracy
//! metrics and stratified bootstrap confidence intervals.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{quantile_sorted, Labels, Matrix};
use crate::error::{Error, Result};

/// Regularizer added to the hessian sum in leaf Newton steps.
const LEAF_EPS: f64 = 1e-6;
/// Prevalence clip for the base score logit.
const PREVALENCE_CLIP: f64 = 1e-6;
/// Minimum split gain; guards against float-noise splits.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GbtMode {
    BinaryLogistic,
    OneVsRestMultilabel,
    Multiclass,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtHyperparams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub mode: GbtMode,
}

impl GbtHyperparams {
    /// 70 estimators, depth 3, learning rate 0.1 (multiple binary tagging).
    pub fn multilabel_preset() -> Self {
        GbtHyperparams {
            n_estimators: 70,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
            mode: GbtMode::OneVsRestMultilabel,
        }
    }

    /// 70 estimators, depth 2, learning rate 0.3 (multiclass).
    pub fn multiclass_preset() -> Self {
        GbtHyperparams {
            n_estimators: 70,
            max_depth: 2,
            learning_rate: 0.3,
            min_samples_leaf: 1,
            mode: GbtMode::Multiclass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 || self.max_depth == 0 {
            return Err(Error::Config(
                "n_estimators and max_depth must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config("learning_rate must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature_index: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict_row(&self, features: &Matrix, row: usize) -> f64 {
        match self {
            TreeNode::Leaf { value } => *value,
            TreeNode::Split {
                feature_index,
                threshold,
                left,
                right,
            } => {
                if features.get(row, *feature_index) < *threshold {
                    left.predict_row(features, row)
                } else {
                    right.predict_row(features, row)
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

/// Boosted model for one output (one tag or one-vs-rest class).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputModel {
    pub base_score: f64,
    pub trees: Vec<TreeNode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtModel {
    pub schema_version: u32,
    pub outputs: Vec<OutputModel>,
    pub hyper: GbtHyperparams,
    pub n_features: usize,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss of a raw margin against a 0/1 label, numerically stable.
pub fn logistic_loss(y: f64, margin: f64) -> f64 {
    margin.max(0.0) - margin * y + (1.0 + (-margin.abs()).exp()).ln()
}

/// Negative gradient of the logistic loss with respect to the margin.
pub fn logistic_negative_gradient(y: f64, p: f64) -> f64 {
    y - p
}

/// Trains a boosted model. Deterministic for fixed inputs; `_seed` is
/// accepted for interface stability but the exact greedy splitter does not
/// consume randomness.
pub fn train_gbt(
    features: &Matrix,
    labels: &Labels,
    hyper: &GbtHyperparams,
    _seed: u64,
) -> Result<GbtModel> {
    hyper.validate()?;
    if labels.n_rows() != features.n_rows() {
        return Err(Error::Config(format!(
            "labels have {} rows, features have {}",
            labels.n_rows(),
            features.n_rows()
        )));
    }
    for j in 0..features.n_cols() {
        if let Some(v) = features.col(j).iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "non-finite feature value {v} in column {j}"
            )));
        }
    }
    let targets = binary_targets(labels, hyper.mode)?;
    let sorted = presort(features);
    let outputs: Vec<OutputModel> = targets
        .par_iter()
        .map(|y| train_output(features, y, hyper, &sorted))
        .collect();
    Ok(GbtModel {
        schema_version: 1,
        outputs,
        hyper: hyper.clone(),
        n_features: features.n_cols(),
    })
}

fn binary_targets(labels: &Labels, mode: GbtMode) -> Result<Vec<Vec<u8>>> {
    match (labels, mode) {
        (
            Labels::MultiLabel { tags, .. },
            GbtMode::OneVsRestMultilabel | GbtMode::BinaryLogistic,
        ) => Ok(tags.clone()),
        (Labels::MultiClass { classes, n_classes }, GbtMode::Multiclass) => Ok((0..*n_classes)
            .map(|k| classes.iter().map(|&c| u8::from(c == k)).collect())
            .collect()),
        _ => Err(Error::Config(
            "classifier mode does not match label type".into(),
        )),
    }
}

/// Per-feature row indices sorted ascending by value (ties by row index).
fn presort(features: &Matrix) -> Vec<Vec<u32>> {
    (0..features.n_cols())
        .map(|j| {
            let col = features.col(j);
            let mut idx: Vec<u32> = (0..features.n_rows() as u32).collect();
            idx.sort_unstable_by(|&a, &b| {
                col[a as usize]
                    .total_cmp(&col[b as usize])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

fn train_output(
    features: &Matrix,
    y: &[u8],
    hyper: &GbtHyperparams,
    sorted: &[Vec<u32>],
) -> OutputModel {
    let n = y.len();
    let prevalence = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    let clipped = prevalence.clamp(PREVALENCE_CLIP, 1.0 - PREVALENCE_CLIP);
    let base_score = (clipped / (1.0 - clipped)).ln();
    let single_class = y.iter().all(|&v| v == y[0]);
    let mut model = OutputModel {
        base_score,
        trees: Vec::new(),
    };
    if single_class {
        return model;
    }

    let mut margins = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..hyper.n_estimators {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = logistic_negative_gradient(f64::from(y[i]), p);
            hess[i] = p * (1.0 - p);
        }
        let (tree, leaf_of_row, leaf_values) = grow_tree(features, &grad, &hess, hyper, sorted);
        for i in 0..n {
            margins[i] += hyper.learning_rate * leaf_values[leaf_of_row[i] as usize];
        }
        model.trees.push(tree);
    }
    model
}

#[derive(Clone, Copy)]
struct SplitChoice {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct FlatNode {
    count: usize,
    sum_g: f64,
    sum_h: f64,
    split: Option<SplitChoice>,
    children: Option<(usize, usize)>,
}

/// Grows one regression tree level-wise with exact greedy variance-reduction
/// splits over presorted columns. Returns the tree, each row's final leaf
/// id, and per-node leaf values (Newton steps, unscaled).
fn grow_tree(
    features: &Matrix,
    grad: &[f64],
    hess: &[f64],
    hyper: &GbtHyperparams,
    sorted: &[Vec<u32>],
) -> (TreeNode, Vec<u32>, Vec<f64>) {
    let n = grad.len();
    let mut nodes = vec![FlatNode {
        count: n,
        sum_g: grad.iter().sum(),
        sum_h: hess.iter().sum(),
        split: None,
        children: None,
    }];
    let mut node_of: Vec<u32> = vec![0; n];
    let mut frontier = vec![0usize];

    for _ in 0..hyper.max_depth {
        if frontier.is_empty() {
            break;
        }
        let n_nodes = nodes.len();
        let mut is_frontier = vec![false; n_nodes];
        for &id in &frontier {
            is_frontier[id] = true;
        }
        let mut best: Vec<Option<SplitChoice>> = vec![None; n_nodes];

        let mut left_g = vec![0.0; n_nodes];
        let mut left_cnt = vec![0usize; n_nodes];
        let mut last_val = vec![0.0f64; n_nodes];
        for (feature, order) in sorted.iter().enumerate() {
            for &id in &frontier {
                left_g[id] = 0.0;
                left_cnt[id] = 0;
            }
            for &row in order {
                let row = row as usize;
                let id = node_of[row] as usize;
                if !is_frontier[id] {
                    continue;
                }
                let v = features.get(row, feature);
                let nl = left_cnt[id];
                if nl > 0 && v > last_val[id] {
                    let node = &nodes[id];
                    let nr = node.count - nl;
                    if nl >= hyper.min_samples_leaf && nr >= hyper.min_samples_leaf {
                        let gl = left_g[id];
                        let gr = node.sum_g - gl;
                        let gain = gl * gl / nl as f64 + gr * gr / nr as f64
                            - node.sum_g * node.sum_g / node.count as f64;
                        let better = match best[id] {
                            None => gain > MIN_GAIN,
                            Some(b) => gain > b.gain,
                        };
                        if better {
                            best[id] = Some(SplitChoice {
                                gain,
                                feature,
                                threshold: 0.5 * (last_val[id] + v),
                            });
                        }
                    }
                }
                left_g[id] += grad[row];
                left_cnt[id] += 1;
                last_val[id] = v;
            }
        }

        let mut next_frontier = Vec::new();
        for &id in &frontier {
            if let Some(choice) = best[id] {
                let left_id = nodes.len();
                let right_id = left_id + 1;
                nodes[id].split = Some(choice);
                nodes[id].children = Some((left_id, right_id));
                nodes.push(FlatNode {
                    count: 0,
                    sum_g: 0.0,
                    sum_h: 0.0,
                    split: None,
                    children: None,
                });
                nodes.push(FlatNode {
                    count: 0,
                    sum_g: 0.0,
                    sum_h: 0.0,
                    split: None,
                    children: None,
                });
                next_frontier.push(left_id);
                next_frontier.push(right_id);
            }
        }
        if next_frontier.is_empty() {
            break;
        }
        for row in 0..n {
            let id = node_of[row] as usize;
            if let (Some(choice), Some((l, r))) = (nodes[id].split, nodes[id].children) {
                let child = if features.get(row, choice.feature) < choice.threshold {
                    l
                } else {
                    r
                };
                node_of[row] = child as u32;
                nodes[child].count += 1;
                nodes[child].sum_g += grad[row];
                nodes[child].sum_h += hess[row];
            }
        }
        frontier = next_frontier;
    }

    let leaf_values: Vec<f64> = nodes
        .iter()
        .map(|node| {
            if node.children.is_some() {
                0.0
            } else {
                node.sum_g / (node.sum_h + LEAF_EPS)
            }
        })
        .collect();
    let tree = build_nested(&nodes, &leaf_values, 0);
    (tree, node_of, leaf_values)
}

fn build_nested(nodes: &[FlatNode], leaf_values: &[f64], id: usize) -> TreeNode {
    match (&nodes[id].split, nodes[id].children) {
        (Some(choice), Some((l, r))) => TreeNode::Split {
            feature_index: choice.feature,
            threshold: choice.threshold,
            left: Box::new(build_nested(nodes, leaf_values, l)),
            right: Box::new(build_nested(nodes, leaf_values, r)),
        },
        _ => TreeNode::Leaf {
            value: leaf_values[id],
        },
    }
}

/// Per-output probabilities, `scores[output][row]`.
pub fn predict_scores(model: &GbtModel, features: &Matrix) -> Result<Vec<Vec<f64>>> {
    if features.n_cols() != model.n_features {
        return Err(Error::Config(format!(
            "model trained on {} features, got {}",
            model.n_features,
            features.n_cols()
        )));
    }
    let n = features.n_rows();
    Ok(model
        .outputs
        .iter()
        .map(|out| {
            (0..n)
                .map(|row| {
                    let margin: f64 = out.base_score
                        + out
                            .trees
                            .iter()
                            .map(|t| model.hyper.learning_rate * t.predict_row(features, row))
                            .sum::<f64>();
                    sigmoid(margin)
                })
                .collect()
        })
        .collect())
}

/// Argmax class per row (multiclass mode); ties resolve to the lowest index.
pub fn predict_classes(scores: &[Vec<f64>]) -> Vec<usize> {
    let n = scores.first().map_or(0, Vec::len);
    (0..n)
        .map(|row| {
            let mut best = 0;
            for (k, col) in scores.iter().enumerate() {
                if col[row] > scores[best][row] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Rank-based binary AUC with mid-rank tie handling. `None` if the output
/// lacks both classes.
pub fn roc_auc_binary(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&v| v == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // Mid-rank over the tie group [i, j), 1-based ranks.
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            if labels[k] == 1 {
                rank_sum_pos += mid_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Macro average over outputs having both classes; outputs without both
/// classes are excluded.
pub fn roc_auc_macro(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<f64> {
    let aucs: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter_map(|(s, l)| roc_auc_binary(s, l))
        .collect();
    if aucs.is_empty() {
        return Err(Error::Metric(
            "no output has both a positive and a negative example".into(),
        ));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

pub fn accuracy(predicted: &[usize], actual: &[usize]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Metric(format!(
            "accuracy length mismatch: {} vs {}",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Metric("accuracy of empty vectors".into()));
    }
    let hits = predicted
        .iter()
        .zip(actual)
        .filter(|(p, a)| p == a)
        .count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    RocAucMacro,
    Accuracy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricResult {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub metric_name: MetricKind,
}

impl MetricResult {
    /// Renders as `0.730 [0.724–0.736]`.
    pub fn table_format(&self) -> String {
        format!(
            "{:.3} [{:.3}\u{2013}{:.3}]",
            self.point, self.ci_low, self.ci_high
        )
    }
}

/// Row-level inputs for metric computation and resampling.
pub enum EvalData<'a> {
    /// Per-tag scores and binary labels (tag-major).
    Scores {
        scores: &'a [Vec<f64>],
        labels: &'a [Vec<u8>],
    },
    /// Predicted and true class indices.
    Classes {
        predicted: &'a [usize],
        actual: &'a [usize],
    },
}

impl EvalData<'_> {
    fn n_rows(&self) -> usize {
        match self {
            EvalData::Scores { labels, .. } => labels.first().map_or(0, Vec::len),
            EvalData::Classes { actual, .. } => actual.len(),
        }
    }

    fn metric_kind(&self) -> MetricKind {
        match self {
            EvalData::Scores { .. } => MetricKind::RocAucMacro,
            EvalData::Classes { .. } => MetricKind::Accuracy,
        }
    }

    fn metric_on(&self, rows: &[usize]) -> Result<f64> {
        match self {
            EvalData::Scores { scores, labels } => {
                let s: Vec<Vec<f64>> = scores
                    .iter()
                    .map(|col| rows.iter().map(|&r| col[r]).collect())
                    .collect();
                let l: Vec<Vec<u8>> = labels
                    .iter()
                    .map(|col| rows.iter().map(|&r| col[r]).collect())
                    .collect();
                roc_auc_macro(&s, &l)
            }
            EvalData::Classes { predicted, actual } => {
                let p: Vec<usize> = rows.iter().map(|&r| predicted[r]).collect();
                let a: Vec<usize> = rows.iter().map(|&r| actual[r]).collect();
                accuracy(&p, &a)
            }
        }
    }
}

/// Percentile bootstrap confidence interval. Class-index data is resampled
/// within each true class (counts preserved exactly); score data uses plain
/// instance resampling.
pub fn bootstrap_ci(data: &EvalData, b: usize, level: f64, seed: u64) -> Result<MetricResult> {
    let n = data.n_rows();
    if b == 0 || n == 0 {
        return Err(Error::Config(
            "bootstrap needs B >= 1 and a nonempty sample".into(),
        ));
    }
    let all_rows: Vec<usize> = (0..n).collect();
    let point = data.metric_on(&all_rows)?;

    // Resample index sets are generated sequentially so parallel metric
    // computation cannot change the result.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Option<Vec<Vec<usize>>> = match data {
        EvalData::Classes { actual, .. } => {
            let n_classes = actual.iter().max().map_or(0, |m| m + 1);
            let mut groups = vec![Vec::new(); n_classes];
            for (row, &c) in actual.iter().enumerate() {
                groups[c].push(row);
            }
            groups.retain(|g| !g.is_empty());
            Some(groups)
        }
        EvalData::Scores { .. } => None,
    };
    let resamples: Vec<Vec<usize>> = (0..b)
        .map(|_| match &strata {
            Some(groups) => {
                let mut rows = Vec::with_capacity(n);
                for group in groups {
                    for _ in 0..group.len() {
                        rows.push(group[rng.random_range(0..group.len())]);
                    }
                }
                rows
            }
            None => (0..n).map(|_| rng.random_range(0..n)).collect(),
        })
        .collect();

    let metrics: Vec<Option<f64>> = resamples
        .par_iter()
        .map(|rows| data.metric_on(rows).ok())
        .collect();
    let mut values: Vec<f64> = metrics.iter().filter_map(|m| *m).collect();
    let failures = b - values.len();
    if failures * 10 > b {
        return Err(Error::Metric(format!(
            "metric undefined on {failures}/{b} bootstrap resamples"
        )));
    }
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lo = quantile_sorted(&values, alpha);
    let hi = quantile_sorted(&values, 1.0 - alpha);
    Ok(MetricResult {
        point,
        ci_low: lo.min(point),
        ci_high: hi.max(point),
        metric_name: data.metric_kind(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_binary(n: usize) -> (Matrix, Labels) {
        // Linearly separable in x0 + x1.
        let mut c0 = Vec::new();
        let mut c1 = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let a = (i as f64 * 0.7919).sin();
            let b = (i as f64 * 1.3137).cos();
            c0.push(a);
            c1.push(b);
            y.push(u8::from(a + b > 0.0));
        }
        (
            Matrix::from_cols(vec![c0, c1]),
            Labels::MultiLabel {
                tag_names: vec!["t".into()],
                tags: vec![y],
            },
        )
    }

    #[test]
    fn separable_toy_reaches_training_accuracy_one() {
        let (x, y) = toy_binary(200);
        let hyper = GbtHyperparams::multilabel_preset();
        let model = train_gbt(&x, &y, &hyper, 0).unwrap();
        let scores = predict_scores(&model, &x).unwrap();
        let labels = match &y {
            Labels::MultiLabel { tags, .. } => &tags[0],
            _ => unreachable!(),
        };
        let hits = scores[0]
            .iter()
            .zip(labels)
            .filter(|(s, &l)| u8::from(**s > 0.5) == l)
            .count();
        assert_eq!(hits, 200);
    }

    #[test]
    fn single_class_output_predicts_prevalence() {
        let x = Matrix::from_cols(vec![vec![1.0, 2.0, 3.0]]);
        let y = Labels::MultiLabel {
            tag_names: vec!["t".into()],
            tags: vec![vec![1, 1, 1]],
        };
        let hyper = GbtHyperparams::multilabel_preset();
        let model = train_gbt(&x, &y, &hyper, 0).unwrap();
        assert!(model.outputs[0].trees.is_empty());
        let scores = predict_scores(&model, &x).unwrap();
        for &s in &scores[0] {
            assert!((s - (1.0 - PREVALENCE_CLIP)).abs() < 1e-9);
        }
    }

    #[test]
    fn negative_gradient_example() {
        assert!((logistic_negative_gradient(1.0, 0.7) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let y = f64::from(rng.random_range(0..2u32));
            let m: f64 = rng.random_range(-4.0..4.0);
            let h = 1e-6;
            let fd = (logistic_loss(y, m + h) - logistic_loss(y, m - h)) / (2.0 * h);
            let analytic = -(logistic_negative_gradient(y, sigmoid(m)));
            assert!(
                (fd - analytic).abs() <= 1e-6 * fd.abs().max(1.0),
                "y={y} m={m} fd={fd} analytic={analytic}"
            );
        }
    }

    #[test]
    fn training_loss_non_increasing() {
        let (x, y) = toy_binary(150);
        let labels = match &y {
            Labels::MultiLabel { tags, .. } => tags[0].clone(),
            _ => unreachable!(),
        };
        let hyper = GbtHyperparams {
            n_estimators: 40,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
            mode: GbtMode::BinaryLogistic,
        };
        let model = train_gbt(&x, &y, &hyper, 0).unwrap();
        let out = &model.outputs[0];
        let mut margins = vec![out.base_score; x.n_rows()];
        let loss = |margins: &[f64]| -> f64 {
            margins
                .iter()
                .zip(&labels)
                .map(|(&m, &l)| logistic_loss(f64::from(l), m))
                .sum()
        };
        let mut prev = loss(&margins);
        for tree in &out.trees {
            for (row, m) in margins.iter_mut().enumerate() {
                *m += hyper.learning_rate * tree.predict_row(&x, row);
            }
            let cur = loss(&margins);
            assert!(cur <= prev + 1e-9, "loss rose {prev} -> {cur}");
            prev = cur;
        }
    }

    #[test]
    fn tree_depth_bounded() {
        let (x, y) = toy_binary(300);
        let hyper = GbtHyperparams {
            n_estimators: 20,
            max_depth: 2,
            learning_rate: 0.3,
            min_samples_leaf: 1,
            mode: GbtMode::BinaryLogistic,
        };
        let model = train_gbt(&x, &y, &hyper, 0).unwrap();
        for tree in &model.outputs[0].trees {
            assert!(tree.depth() <= 2);
        }
    }

    #[test]
    fn deterministic_training() {
        let (x, y) = toy_binary(120);
        let hyper = GbtHyperparams::multilabel_preset();
        let a = train_gbt(&x, &y, &hyper, 0).unwrap();
        let b = train_gbt(&x, &y, &hyper, 99).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn zero_tree_model_scores_half() {
        let model = GbtModel {
            schema_version: 1,
            outputs: vec![OutputModel {
                base_score: 0.0,
                trees: vec![],
            }],
            hyper: GbtHyperparams::multilabel_preset(),
            n_features: 1,
        };
        let x = Matrix::from_cols(vec![vec![1.0, -2.0]]);
        let scores = predict_scores(&model, &x).unwrap();
        assert_eq!(scores[0], vec![0.5, 0.5]);
    }

    #[test]
    fn feature_width_mismatch_is_error() {
        let (x, y) = toy_binary(50);
        let model = train_gbt(&x, &y, &GbtHyperparams::multilabel_preset(), 0).unwrap();
        let wrong = Matrix::from_cols(vec![vec![0.0; 50]]);
        assert!(predict_scores(&model, &wrong).is_err());
    }

    #[test]
    fn auc_spec_example() {
        let auc = roc_auc_binary(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_perfect_and_ties() {
        assert_eq!(roc_auc_binary(&[0.1, 0.9], &[0, 1]).unwrap(), 1.0);
        let auc = roc_auc_binary(&[0.5, 0.5, 0.5, 0.5], &[0, 1, 0, 1]).unwrap();
        assert!((auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_macro_excludes_degenerate_outputs() {
        let scores = vec![vec![0.1, 0.9], vec![0.3, 0.4]];
        let labels = vec![vec![0, 1], vec![1, 1]];
        let auc = roc_auc_macro(&scores, &labels).unwrap();
        assert_eq!(auc, 1.0);
        let all_degenerate = vec![vec![1u8, 1]];
        assert!(roc_auc_macro(&scores[..1], &all_degenerate).is_err());
    }

    #[test]
    fn accuracy_hand_counts() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        let a = accuracy(&[0, 1, 2], &[0, 1, 0]).unwrap();
        assert!((a - 2.0 / 3.0).abs() < 1e-12);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn bootstrap_constant_metric_collapses() {
        let predicted = vec![0usize; 30];
        let actual = vec![0usize; 30];
        let r = bootstrap_ci(
            &EvalData::Classes {
                predicted: &predicted,
                actual: &actual,
            },
            200,
            0.95,
            1,
        )
        .unwrap();
        assert_eq!(r.ci_low, 1.0);
        assert_eq!(r.point, 1.0);
        assert_eq!(r.ci_high, 1.0);
    }

    #[test]
    fn bootstrap_stratified_preserves_class_counts() {
        // Class 0 is always predicted correctly, class 1 always wrongly, so
        // accuracy on a resample is exactly (class 0 count) / n. Stratified
        // resampling keeps the counts fixed, collapsing the CI; plain
        // resampling would not.
        let actual: Vec<usize> = (0..60).map(|i| usize::from(i >= 20)).collect();
        let predicted = vec![0usize; 60];
        let r = bootstrap_ci(
            &EvalData::Classes {
                predicted: &predicted,
                actual: &actual,
            },
            500,
            0.95,
            7,
        )
        .unwrap();
        assert!((r.point - 20.0 / 60.0).abs() < 1e-12);
        assert_eq!(r.ci_low, r.ci_high);
        assert_eq!(r.ci_low, r.point);
    }

    #[test]
    fn table_format_uses_en_dash() {
        let r = MetricResult {
            point: 0.730,
            ci_low: 0.724,
            ci_high: 0.736,
            metric_name: MetricKind::RocAucMacro,
        };
        assert_eq!(r.table_format(), "0.730 [0.724\u{2013}0.736]");
    }
}
