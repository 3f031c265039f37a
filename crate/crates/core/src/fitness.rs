//! Fitness of a candidate tree: augment the feature set, train the
//! classifier, score the validation split, and apply parsimony and
//! invalid-value penalties. Also drives the M-iteration construction loop.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::classifier::{
    self, GbtHyperparams, GbtMode, MetricKind,
};
use crate::data::{column_stats, standardize_column, Dataset, Labels, Matrix};
use crate::engine::{self, EvolutionConfig, RunLog};
use crate::error::{Error, Result};
use crate::exprtree::{self, ExpressionTree};

/// Penalty subtracted from fitness when any pre-sanitize output is
/// non-finite; dominates any metric gain since metrics live in [0, 1].
pub const INVALID_VALUE_PENALTY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub fitness: f64,
    /// Validation ROC-AUC or accuracy, before penalties.
    pub raw_metric: f64,
    pub node_count: usize,
    pub had_non_finite: bool,
}

impl FitnessRecord {
    pub fn compose(raw_metric: f64, node_count: usize, lambda: f64, had_non_finite: bool) -> Self {
        let penalty = if had_non_finite {
            INVALID_VALUE_PENALTY
        } else {
            0.0
        };
        FitnessRecord {
            fitness: raw_metric - lambda * node_count as f64 - penalty,
            raw_metric,
            node_count,
            had_non_finite,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptedFeature {
    pub iteration: usize,
    pub expr: String,
    /// Validation metric of the classifier including this feature.
    pub validation_metric: f64,
}

#[derive(Debug, Clone)]
pub struct ConstructionResult {
    pub accepted: Vec<AcceptedFeature>,
    pub run_logs: Vec<RunLog>,
}

/// Evaluation context for one construction iteration. The cache maps
/// canonical serializations to records and is cleared between iterations by
/// building a fresh context.
pub struct FitnessContext<'a> {
    base_train: Matrix,
    base_val: Matrix,
    train_labels: Labels,
    val_labels: Labels,
    /// Standardized accepted-feature columns, train/val split.
    accepted_train: Vec<Vec<f64>>,
    accepted_val: Vec<Vec<f64>>,
    hyper: &'a GbtHyperparams,
    metric: MetricKind,
    lambda: f64,
    cache: Mutex<HashMap<String, FitnessRecord>>,
}

impl<'a> FitnessContext<'a> {
    pub fn new(
        dataset: &Dataset,
        accepted_trees: &[ExpressionTree],
        hyper: &'a GbtHyperparams,
        metric: MetricKind,
        lambda: f64,
    ) -> Result<Self> {
        check_metric_mode(metric, hyper.mode, &dataset.labels)?;
        let mut ctx = FitnessContext {
            base_train: dataset.features.select_rows(&dataset.train),
            base_val: dataset.features.select_rows(&dataset.val),
            train_labels: dataset.labels.select_rows(&dataset.train),
            val_labels: dataset.labels.select_rows(&dataset.val),
            accepted_train: Vec::new(),
            accepted_val: Vec::new(),
            hyper,
            metric,
            lambda,
            cache: Mutex::new(HashMap::new()),
        };
        for tree in accepted_trees {
            let (train_col, val_col, _) = ctx.candidate_columns(tree)?;
            ctx.accepted_train.push(train_col);
            ctx.accepted_val.push(val_col);
        }
        Ok(ctx)
    }

    /// Evaluates the tree on train and validation rows, sanitizes, and
    /// standardizes with train statistics. Returns (train, val, non-finite
    /// flag).
    fn candidate_columns(&self, tree: &ExpressionTree) -> Result<(Vec<f64>, Vec<f64>, bool)> {
        let (mut train_col, flag_train) = tree.evaluate(&self.base_train)?;
        let (mut val_col, flag_val) = tree.evaluate(&self.base_val)?;
        let rows: Vec<usize> = (0..train_col.len()).collect();
        let (mean, std) = column_stats(&train_col, &rows);
        standardize_column(&mut train_col, mean, std);
        standardize_column(&mut val_col, mean, std);
        Ok((train_col, val_col, flag_train || flag_val))
    }

    fn augmented(&self, extra_train: Option<&[f64]>, extra_val: Option<&[f64]>) -> (Matrix, Matrix) {
        let mut train = self.base_train.clone();
        let mut val = self.base_val.clone();
        for col in &self.accepted_train {
            train.push_col(col.clone());
        }
        for col in &self.accepted_val {
            val.push_col(col.clone());
        }
        if let (Some(t), Some(v)) = (extra_train, extra_val) {
            train.push_col(t.to_vec());
            val.push_col(v.to_vec());
        }
        (train, val)
    }

    fn validation_metric(&self, train: &Matrix, val: &Matrix) -> Result<f64> {
        let model = classifier::train_gbt(train, &self.train_labels, self.hyper, 0)?;
        let scores = classifier::predict_scores(&model, val)?;
        match (self.metric, &self.val_labels) {
            (MetricKind::RocAucMacro, Labels::MultiLabel { tags, .. }) => {
                classifier::roc_auc_macro(&scores, tags)
            }
            (MetricKind::Accuracy, Labels::MultiClass { classes, .. }) => {
                classifier::accuracy(&classifier::predict_classes(&scores), classes)
            }
            _ => Err(Error::Config("metric does not match label type".into())),
        }
    }

    /// Metric of the classifier on base plus accepted features, without any
    /// candidate.
    pub fn baseline_metric(&self) -> Result<f64> {
        let (train, val) = self.augmented(None, None);
        self.validation_metric(&train, &val)
    }

    /// Full candidate evaluation with caching by canonical serialization.
    pub fn evaluate(&self, tree: &ExpressionTree) -> Result<FitnessRecord> {
        let key = tree.serialize();
        if let Some(record) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(record.clone());
        }
        let (train_col, val_col, had_non_finite) = self.candidate_columns(tree)?;
        let (train, val) = self.augmented(Some(&train_col), Some(&val_col));
        let raw_metric = self.validation_metric(&train, &val)?;
        let record = FitnessRecord::compose(
            raw_metric,
            tree.node_count(),
            self.lambda,
            had_non_finite,
        );
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, record.clone());
        Ok(record)
    }

    /// Number of classifier trainings performed (cache misses plus the
    /// baseline); test hook.
    #[cfg(test)]
    fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

fn check_metric_mode(metric: MetricKind, mode: GbtMode, labels: &Labels) -> Result<()> {
    let ok = matches!(
        (metric, mode, labels),
        (
            MetricKind::RocAucMacro,
            GbtMode::OneVsRestMultilabel | GbtMode::BinaryLogistic,
            Labels::MultiLabel { .. },
        ) | (MetricKind::Accuracy, GbtMode::Multiclass, Labels::MultiClass { .. })
    );
    if ok {
        Ok(())
    } else {
        Err(Error::Config(
            "metric, classifier mode, and label type are inconsistent".into(),
        ))
    }
}

/// Runs up to M full GP iterations, accepting the hall-of-fame best of each
/// and augmenting the feature set before the next. Terminals remain base
/// features throughout.
pub fn iterative_construct(
    dataset: &Dataset,
    config: &EvolutionConfig,
    hyper: &GbtHyperparams,
    metric: MetricKind,
) -> Result<ConstructionResult> {
    config.validate()?;
    let mut accepted_trees: Vec<ExpressionTree> = Vec::new();
    let mut accepted = Vec::new();
    let mut run_logs = Vec::new();
    for iteration in 1..=config.m_iterations {
        let ctx = FitnessContext::new(dataset, &accepted_trees, hyper, metric, config.lambda)?;
        let log = engine::evolve_one_run(
            config,
            &dataset.feature_table,
            &|tree| ctx.evaluate(tree),
            (iteration - 1) as u64,
        )
        .map_err(|e| Error::Config(format!("iteration {iteration}: {e}")))?;
        let best = log
            .hall_of_fame
            .first()
            .ok_or_else(|| Error::Config(format!("iteration {iteration}: empty hall of fame")))?;
        let tree = exprtree::parse(&best.expr, &dataset.feature_table)?;
        accepted.push(AcceptedFeature {
            iteration,
            expr: best.expr.clone(),
            validation_metric: best.raw_metric,
        });
        accepted_trees.push(tree);
        run_logs.push(log);
    }
    Ok(ConstructionResult {
        accepted,
        run_logs,
    })
}

/// Base-plus-composites feature matrices for the three splits. Composite
/// columns are evaluated on all rows, sanitized, and standardized with
/// train statistics.
pub struct AugmentedSplits {
    pub train: Matrix,
    pub val: Matrix,
    pub test: Matrix,
}

pub fn build_augmented_splits(
    dataset: &Dataset,
    trees: &[ExpressionTree],
) -> Result<AugmentedSplits> {
    let mut full = dataset.features.clone();
    for tree in trees {
        let (mut col, _) = tree.evaluate(&dataset.features)?;
        let (mean, std) = column_stats(&col, &dataset.train);
        standardize_column(&mut col, mean, std);
        full.push_col(col);
    }
    Ok(AugmentedSplits {
        train: full.select_rows(&dataset.train),
        val: full.select_rows(&dataset.val),
        test: full.select_rows(&dataset.test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, LabelRule, SyntheticSpec};
    use crate::exprtree::parse;

    fn small_dataset() -> Dataset {
        generate_synthetic(&SyntheticSpec {
            n_rows: 120,
            n_base_features: 4,
            planted_expression: "(add x0 x1)".into(),
            label_rule: LabelRule::ThresholdBinary,
            noise_std: 0.1,
            seed: 21,
        })
        .unwrap()
    }

    fn quick_hyper() -> GbtHyperparams {
        GbtHyperparams {
            n_estimators: 10,
            max_depth: 2,
            learning_rate: 0.3,
            min_samples_leaf: 1,
            mode: GbtMode::OneVsRestMultilabel,
        }
    }

    #[test]
    fn fitness_arithmetic() {
        let r = FitnessRecord::compose(0.80, 7, 0.01, false);
        assert!((r.fitness - 0.73).abs() < 1e-12);
        let r = FitnessRecord::compose(0.80, 7, 0.01, true);
        assert!((r.fitness - (-0.27)).abs() < 1e-12);
    }

    #[test]
    fn parsimony_ordering() {
        let small = FitnessRecord::compose(0.8, 3, 0.01, false);
        let large = FitnessRecord::compose(0.8, 9, 0.01, false);
        assert!((small.fitness - large.fitness - 0.01 * 6.0).abs() < 1e-12);
        assert!(small.fitness > large.fitness);
    }

    #[test]
    fn candidate_column_standardized_with_train_stats() {
        let ds = small_dataset();
        let hyper = quick_hyper();
        let ctx =
            FitnessContext::new(&ds, &[], &hyper, MetricKind::RocAucMacro, 0.01).unwrap();
        let tree = parse("(mul x0 x1)", &ds.feature_table).unwrap();
        let (train_col, _, _) = ctx.candidate_columns(&tree).unwrap();
        let rows: Vec<usize> = (0..train_col.len()).collect();
        let (mean, std) = column_stats(&train_col, &rows);
        assert!(mean.abs() < 1e-9);
        assert!((std - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_candidate_is_all_zero() {
        let ds = small_dataset();
        let hyper = quick_hyper();
        let ctx =
            FitnessContext::new(&ds, &[], &hyper, MetricKind::RocAucMacro, 0.01).unwrap();
        let tree = parse("1.5", &ds.feature_table).unwrap();
        let (train_col, val_col, _) = ctx.candidate_columns(&tree).unwrap();
        assert!(train_col.iter().all(|&v| v == 0.0));
        assert!(val_col.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_base_column_scores_near_baseline() {
        let ds = small_dataset();
        let hyper = quick_hyper();
        let ctx =
            FitnessContext::new(&ds, &[], &hyper, MetricKind::RocAucMacro, 0.01).unwrap();
        let baseline = ctx.baseline_metric().unwrap();
        let dup = parse("x0", &ds.feature_table).unwrap();
        let record = ctx.evaluate(&dup).unwrap();
        assert!(
            (record.raw_metric - baseline).abs() < 0.05,
            "duplicate column metric {} vs baseline {baseline}",
            record.raw_metric
        );
    }

    #[test]
    fn cache_hits_skip_retraining() {
        let ds = small_dataset();
        let hyper = quick_hyper();
        let ctx =
            FitnessContext::new(&ds, &[], &hyper, MetricKind::RocAucMacro, 0.01).unwrap();
        let tree = parse("(tanh x2)", &ds.feature_table).unwrap();
        let first = ctx.evaluate(&tree).unwrap();
        assert_eq!(ctx.cache_len(), 1);
        let second = ctx.evaluate(&tree).unwrap();
        assert_eq!(ctx.cache_len(), 1);
        assert_eq!(first, second);
    }

    #[test]
    fn cache_cleared_between_iterations() {
        // A fresh context per iteration starts with an empty cache even for
        // a tree evaluated before.
        let ds = small_dataset();
        let hyper = quick_hyper();
        let tree = parse("(tanh x2)", &ds.feature_table).unwrap();
        let ctx1 =
            FitnessContext::new(&ds, &[], &hyper, MetricKind::RocAucMacro, 0.01).unwrap();
        ctx1.evaluate(&tree).unwrap();
        let accepted = [parse("(mul x0 x1)", &ds.feature_table).unwrap()];
        let ctx2 =
            FitnessContext::new(&ds, &accepted, &hyper, MetricKind::RocAucMacro, 0.01).unwrap();
        assert_eq!(ctx2.cache_len(), 0);
        // And the record differs in general because the augmented set changed.
        ctx2.evaluate(&tree).unwrap();
        assert_eq!(ctx2.cache_len(), 1);
    }

    #[test]
    fn metric_label_mismatch_rejected() {
        let ds = small_dataset();
        let hyper = GbtHyperparams::multiclass_preset();
        assert!(
            FitnessContext::new(&ds, &[], &hyper, MetricKind::Accuracy, 0.01).is_err()
        );
    }

    #[test]
    fn iterative_construct_accepts_at_most_m() {
        let ds = small_dataset();
        let hyper = quick_hyper();
        let config = EvolutionConfig {
            population_size: 10,
            max_generations: 2,
            m_iterations: 2,
            seed: 5,
            ..Default::default()
        };
        let result =
            iterative_construct(&ds, &config, &hyper, MetricKind::RocAucMacro).unwrap();
        assert_eq!(result.accepted.len(), 2);
        assert_eq!(result.run_logs.len(), 2);
        for (i, f) in result.accepted.iter().enumerate() {
            assert_eq!(f.iteration, i + 1);
        }
        // Accepted feature equals the hall-of-fame best of its run.
        assert_eq!(
            result.accepted[0].expr,
            result.run_logs[0].hall_of_fame[0].expr
        );
    }

    #[test]
    fn augmented_splits_shapes() {
        let ds = small_dataset();
        let trees = vec![parse("(mul x0 x1)", &ds.feature_table).unwrap()];
        let aug = build_augmented_splits(&ds, &trees).unwrap();
        assert_eq!(aug.train.n_cols(), 5);
        assert_eq!(aug.train.n_rows(), ds.train.len());
        assert_eq!(aug.val.n_rows(), ds.val.len());
        assert_eq!(aug.test.n_rows(), ds.test.len());
    }
}
