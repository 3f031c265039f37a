//! Command-line front end: one TOML config document drives evolution,
//! evaluation, analysis, and synthetic data generation. Flags only select
//! the command, config path, and output locations.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::classifier::{
    bootstrap_ci, predict_classes, predict_scores, train_gbt, EvalData, GbtHyperparams, GbtMode,
    MetricKind, MetricResult,
};
use crate::data::{generate_synthetic, load_csv, Dataset, Labels, SyntheticSpec};
use crate::engine::{EvolutionConfig, RunLog};
use crate::error::{Error, Result};
use crate::exprtree::{self, ExpressionTree, FeatureTable};
use crate::fitness::{build_augmented_splits, iterative_construct, ConstructionResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "gpfeat", version, about = "Evolves composite features for tabular classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run iterative feature construction and report the test metric.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for run logs, expressions, and metrics.
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive interpretability reports from run logs alone.
    Analyze {
        #[arg(long)]
        out: PathBuf,
        /// Number of top expressions to dump.
        #[arg(long, default_value_t = 20)]
        top_k: usize,
        /// Run log paths (JSONL).
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Train on the train split with the given composite features and
    /// report the test metric with a bootstrap CI.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Expression file: one prefix-form expression per line, `#` comments.
        #[arg(long)]
        features: PathBuf,
        /// Optional directory for metrics.json; the metric always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset as feature/label/split CSV files.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Dataset source: CSV files on disk or an embedded synthetic recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum DatasetConfig {
    Files {
        features: PathBuf,
        labels: PathBuf,
        split: PathBuf,
    },
    Synthetic { synthetic: SyntheticSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub b: usize,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { b: 2000, level: 0.95 }
    }
}

/// The single config document behind every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    pub metric: MetricKind,
    /// Worker threads for fitness evaluation and bootstrap resampling;
    /// 0 means all available cores. Outputs do not depend on this.
    #[serde(default)]
    pub workers: usize,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    /// Defaults to the preset matching `metric` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<GbtHyperparams>,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported config schema_version {}",
                config.schema_version
            )));
        }
        // The top-level seed is the single source of randomness.
        config.evolution.seed = config.seed;
        config.evolution.validate()?;
        config.hyper().validate()?;
        check_metric_hyper(config.metric, &config.hyper())?;
        if !(config.bootstrap.level > 0.0 && config.bootstrap.level < 1.0) {
            return Err(Error::Config("bootstrap level must be in (0, 1)".into()));
        }
        Ok(config)
    }

    pub fn hyper(&self) -> GbtHyperparams {
        self.classifier.clone().unwrap_or_else(|| match self.metric {
            MetricKind::RocAucMacro => GbtHyperparams::multilabel_preset(),
            MetricKind::Accuracy => GbtHyperparams::multiclass_preset(),
        })
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetConfig::Files {
                features,
                labels,
                split,
            } => load_csv(features, labels, split),
            DatasetConfig::Synthetic { synthetic } => generate_synthetic(synthetic),
        }
    }
}

fn check_metric_hyper(metric: MetricKind, hyper: &GbtHyperparams) -> Result<()> {
    let ok = match metric {
        MetricKind::RocAucMacro => {
            matches!(hyper.mode, GbtMode::OneVsRestMultilabel | GbtMode::BinaryLogistic)
        }
        MetricKind::Accuracy => matches!(hyper.mode, GbtMode::Multiclass),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "metric {metric:?} is incompatible with classifier mode {:?}",
            hyper.mode
        )))
    }
}

fn check_metric_labels(metric: MetricKind, labels: &Labels) -> Result<()> {
    match (metric, labels) {
        (MetricKind::RocAucMacro, Labels::MultiLabel { .. })
        | (MetricKind::Accuracy, Labels::MultiClass { .. }) => Ok(()),
        (MetricKind::RocAucMacro, Labels::MultiClass { .. }) => Err(Error::Config(
            "metric roc_auc_macro requires multilabel (tag indicator) labels".into(),
        )),
        (MetricKind::Accuracy, Labels::MultiLabel { .. }) => Err(Error::Config(
            "metric accuracy requires multiclass (class index) labels".into(),
        )),
    }
}

/// Exit code policy: 1 for invalid inputs or configuration, 2 for runtime
/// failures.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Io { .. } | Error::Json(_) | Error::RunLog { .. } | Error::Fitness { .. } => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evolve { config, out } => cmd_evolve(&config, &out),
        Command::Analyze { out, top_k, logs } => cmd_analyze(&logs, top_k, &out),
        Command::Eval {
            config,
            features,
            out,
        } => cmd_eval(&config, &features, out.as_deref()),
        Command::Synth { config, out } => cmd_synth(&config, &out),
    }
}

fn in_worker_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Debug, Serialize)]
struct MetricsReport<'a> {
    schema_version: u32,
    seed: u64,
    metric: MetricKind,
    baseline_test: &'a MetricResult,
    augmented_test: &'a MetricResult,
    table: String,
    accepted: Vec<AcceptedEcho<'a>>,
}

#[derive(Debug, Serialize)]
struct AcceptedEcho<'a> {
    iteration: usize,
    expr: &'a str,
    validation_fitness_metric: f64,
}

pub fn cmd_evolve(config_path: &Path, out_dir: &Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let dataset = config.load_dataset()?;
    check_metric_labels(config.metric, &dataset.labels)?;
    create_dir(out_dir)?;
    let hyper = config.hyper();

    eprintln!(
        "evolve: {} iterations, population {}, up to {} generations, seed {}",
        config.evolution.m_iterations,
        config.evolution.population_size,
        config.evolution.max_generations,
        config.seed
    );
    let result: ConstructionResult = in_worker_pool(config.workers, || {
        iterative_construct(&dataset, &config.evolution, &hyper, config.metric)
    })??;

    for (i, log) in result.run_logs.iter().enumerate() {
        report_run_progress(i + 1, log);
        log.save(&out_dir.join(format!("runlog_{}.jsonl", i + 1)))?;
    }

    let mut features_txt = format!(
        "# schema_version {SCHEMA_VERSION}\n# seed {}\n# metric {:?}\n",
        config.seed, config.metric
    );
    for a in &result.accepted {
        features_txt.push_str(&a.expr);
        features_txt.push('\n');
    }
    write_file(&out_dir.join("features.txt"), features_txt.as_bytes())?;

    let trees: Vec<ExpressionTree> = result
        .accepted
        .iter()
        .map(|a| exprtree::parse(&a.expr, &dataset.feature_table))
        .collect::<Result<_>>()?;
    let (baseline, augmented) = in_worker_pool(config.workers, || {
        let baseline = test_metric(&dataset, &[], &hyper, &config)?;
        let augmented = test_metric(&dataset, &trees, &hyper, &config)?;
        Ok::<_, Error>((baseline, augmented))
    })??;

    let report = MetricsReport {
        schema_version: SCHEMA_VERSION,
        seed: config.seed,
        metric: config.metric,
        baseline_test: &baseline,
        augmented_test: &augmented,
        table: augmented.table_format(),
        accepted: result
            .accepted
            .iter()
            .map(|a| AcceptedEcho {
                iteration: a.iteration,
                expr: &a.expr,
                validation_fitness_metric: a.validation_metric,
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_file(&out_dir.join("metrics.json"), json.as_bytes())?;

    let echo =
        toml::to_string(&config).map_err(|e| Error::Config(format!("config echo: {e}")))?;
    write_file(&out_dir.join("config.toml"), echo.as_bytes())?;

    eprintln!(
        "evolve: baseline {} -> augmented {}",
        baseline.table_format(),
        augmented.table_format()
    );
    Ok(())
}

fn report_run_progress(iteration: usize, log: &RunLog) {
    let mut best = f64::NEG_INFINITY;
    let mut current_gen = usize::MAX;
    for record in &log.evaluations {
        if record.gen != current_gen {
            if current_gen != usize::MAX {
                eprintln!("iteration {iteration} gen {current_gen}: best {best:.6}");
            }
            current_gen = record.gen;
        }
        best = best.max(record.fitness);
    }
    if current_gen != usize::MAX {
        eprintln!("iteration {iteration} gen {current_gen}: best {best:.6}");
    }
    eprintln!(
        "iteration {iteration}: {} generations, stop reason {:?}",
        log.generations_completed, log.stop_reason
    );
}

/// Trains on the train split with the given composite features and
/// bootstraps the test metric.
fn test_metric(
    dataset: &Dataset,
    trees: &[ExpressionTree],
    hyper: &GbtHyperparams,
    config: &RunConfig,
) -> Result<MetricResult> {
    let splits = build_augmented_splits(dataset, trees)?;
    let train_labels = dataset.labels.select_rows(&dataset.train);
    let test_labels = dataset.labels.select_rows(&dataset.test);
    let model = train_gbt(&splits.train, &train_labels, hyper, config.seed)?;
    let scores = predict_scores(&model, &splits.test)?;
    match &test_labels {
        Labels::MultiLabel { tags, .. } => bootstrap_ci(
            &EvalData::Scores {
                scores: &scores,
                labels: tags,
            },
            config.bootstrap.b,
            config.bootstrap.level,
            config.seed,
        ),
        Labels::MultiClass { classes, .. } => {
            let predicted = predict_classes(&scores);
            bootstrap_ci(
                &EvalData::Classes {
                    predicted: &predicted,
                    actual: classes,
                },
                config.bootstrap.b,
                config.bootstrap.level,
                config.seed,
            )
        }
    }
}

#[derive(Debug, Serialize)]
struct AnalysisSummary {
    schema_version: u32,
    n_logs: usize,
    n_distinct_expressions: usize,
    best_fitness: analysis::FiveNumberSummary,
    best_raw_metric: analysis::FiveNumberSummary,
}

pub fn cmd_analyze(log_paths: &[PathBuf], top_k: usize, out_dir: &Path) -> Result<()> {
    if log_paths.is_empty() {
        return Err(Error::Config("analyze needs at least one run log".into()));
    }
    let logs: Vec<RunLog> = log_paths.iter().map(|p| RunLog::load(p)).collect::<Result<_>>()?;
    create_dir(out_dir)?;

    let top = analysis::top_expressions(&logs, top_k)?;
    let all = analysis::top_expressions(&logs, usize::MAX)?;
    let mut dump = String::new();
    for (rank, e) in top.iter().enumerate() {
        let (_, feats) = exprtree::scan_items(&e.expr)?;
        let names: Vec<String> = feats.into_iter().collect();
        let infix = if names.is_empty() {
            // Pure-constant expression; parse against a dummy table.
            exprtree::parse(&e.expr, &FeatureTable::new(&["_"])?)?.infix()
        } else {
            exprtree::parse(&e.expr, &FeatureTable::new(&names)?)?.infix()
        };
        dump.push_str(&format!(
            "{}\tfitness={:.6}\tmetric={:.6}\tnodes={}\t{}\t{}\n",
            rank + 1,
            e.fitness,
            e.raw_metric,
            e.nodes,
            e.expr,
            infix
        ));
    }
    write_file(&out_dir.join("expressions.txt"), dump.as_bytes())?;

    let pairs = analysis::feature_pair_cooccurrence(&all)?;
    let mut buf = Vec::new();
    analysis::write_combined_triangle_csv(&pairs, &mut buf)
        .map_err(|e| Error::io("feature_pairs.csv", e))?;
    write_file(&out_dir.join("feature_pairs.csv"), &buf)?;
    analysis::render_heatmap_svg(&pairs, &out_dir.join("feature_pairs.svg"))?;

    let op_feat = analysis::operator_feature_stats(&all)?;
    analysis::write_rectangular_csvs(
        &op_feat,
        &out_dir.join("operator_feature_counts.csv"),
        &out_dir.join("operator_feature_means.csv"),
    )?;

    let mut best_fitness = Vec::new();
    let mut best_metric = Vec::new();
    for (i, log) in logs.iter().enumerate() {
        let series = analysis::trajectory(log)?;
        let mut buf = Vec::new();
        analysis::write_trajectory_csv(&series, &mut buf)
            .map_err(|e| Error::io("trajectory csv", e))?;
        write_file(&out_dir.join(format!("trajectory_{}.csv", i + 1)), &buf)?;
        best_fitness.push(*series.best_so_far.last().unwrap());
        best_metric.push(
            log.hall_of_fame
                .first()
                .map_or(f64::NEG_INFINITY, |e| e.raw_metric),
        );
    }

    let summary = AnalysisSummary {
        schema_version: SCHEMA_VERSION,
        n_logs: logs.len(),
        n_distinct_expressions: all.len(),
        best_fitness: analysis::distribution_summary(&best_fitness)?,
        best_raw_metric: analysis::distribution_summary(&best_metric)?,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write_file(&out_dir.join("summary.json"), json.as_bytes())?;
    eprintln!(
        "analyze: {} logs, {} distinct expressions, top {} dumped",
        logs.len(),
        all.len(),
        top.len()
    );
    Ok(())
}

/// Reads an expression file: one prefix expression per line, blank lines
/// and `#` comment lines ignored.
pub fn read_expression_file(path: &Path, table: &FeatureTable) -> Result<Vec<ExpressionTree>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| exprtree::parse(l, table))
        .collect()
}

pub fn cmd_eval(config_path: &Path, features_path: &Path, out_dir: Option<&Path>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let dataset = config.load_dataset()?;
    check_metric_labels(config.metric, &dataset.labels)?;
    let trees = read_expression_file(features_path, &dataset.feature_table)?;
    let hyper = config.hyper();
    eprintln!("eval: {} composite features, seed {}", trees.len(), config.seed);
    let result = in_worker_pool(config.workers, || {
        test_metric(&dataset, &trees, &hyper, &config)
    })??;
    println!("{}", result.table_format());
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        let mut json = serde_json::to_string_pretty(&result)?;
        json.push('\n');
        write_file(&dir.join("metrics.json"), json.as_bytes())?;
    }
    Ok(())
}

pub fn cmd_synth(config_path: &Path, out_dir: &Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let DatasetConfig::Synthetic { synthetic } = &config.dataset else {
        return Err(Error::Config(
            "synth requires a [dataset.synthetic] section".into(),
        ));
    };
    let dataset = generate_synthetic(synthetic)?;
    create_dir(out_dir)?;

    let mut raw = dataset.features.clone();
    dataset.standardizer.destandardize(&mut raw);
    let names: Vec<&str> = dataset.feature_table.names().collect();
    let mut features_csv = names.join(",");
    features_csv.push('\n');
    for r in 0..raw.n_rows() {
        let row: Vec<String> = (0..raw.n_cols()).map(|c| format!("{}", raw.get(r, c))).collect();
        features_csv.push_str(&row.join(","));
        features_csv.push('\n');
    }
    write_file(&out_dir.join("features.csv"), features_csv.as_bytes())?;

    let mut labels_csv = String::new();
    match &dataset.labels {
        Labels::MultiLabel { tag_names, tags } => {
            labels_csv.push_str(&tag_names.join(","));
            labels_csv.push('\n');
            for r in 0..dataset.n_rows() {
                let row: Vec<String> = tags.iter().map(|t| t[r].to_string()).collect();
                labels_csv.push_str(&row.join(","));
                labels_csv.push('\n');
            }
        }
        Labels::MultiClass { classes, .. } => {
            labels_csv.push_str("class\n");
            for &c in classes {
                labels_csv.push_str(&format!("{c}\n"));
            }
        }
    }
    write_file(&out_dir.join("labels.csv"), labels_csv.as_bytes())?;

    let mut split_csv = String::from("row,split\n");
    let mut assignment = vec![""; dataset.n_rows()];
    for &r in &dataset.train {
        assignment[r] = "train";
    }
    for &r in &dataset.val {
        assignment[r] = "val";
    }
    for &r in &dataset.test {
        assignment[r] = "test";
    }
    for (r, split) in assignment.iter().enumerate() {
        split_csv.push_str(&format!("{r},{split}\n"));
    }
    write_file(&out_dir.join("split.csv"), split_csv.as_bytes())?;

    eprintln!(
        "synth: {} rows, {} features written to {}",
        dataset.n_rows(),
        names.len(),
        out_dir.display()
    );
    Ok(())
}
