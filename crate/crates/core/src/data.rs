//! Tabular ingestion, split management, standardization, and synthetic
//! dataset generation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exprtree::{self, ExpressionTree, FeatureTable};

/// Column-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n_rows: usize,
    cols: Vec<Vec<f64>>,
}

impl Matrix {
    pub fn from_cols(cols: Vec<Vec<f64>>) -> Self {
        let n_rows = cols.first().map_or(0, Vec::len);
        assert!(cols.iter().all(|c| c.len() == n_rows), "ragged columns");
        Matrix { n_rows, cols }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Matrix {
            n_rows,
            cols: vec![vec![0.0; n_rows]; n_cols],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.cols[j]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cols[col][row]
    }

    pub fn push_col(&mut self, col: Vec<f64>) {
        assert_eq!(col.len(), self.n_rows, "column length mismatch");
        self.cols.push(col);
    }

    /// Copies out the listed rows.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let cols = self
            .cols
            .iter()
            .map(|c| rows.iter().map(|&r| c[r]).collect())
            .collect();
        Matrix {
            n_rows: rows.len(),
            cols,
        }
    }
}

/// Target labels: one binary column per tag, or a single class index per row.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Tag-major binary indicators: `tags[t][row]`.
    MultiLabel {
        tag_names: Vec<String>,
        tags: Vec<Vec<u8>>,
    },
    MultiClass {
        classes: Vec<usize>,
        n_classes: usize,
    },
}

impl Labels {
    pub fn n_rows(&self) -> usize {
        match self {
            Labels::MultiLabel { tags, .. } => tags.first().map_or(0, Vec::len),
            Labels::MultiClass { classes, .. } => classes.len(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Labels {
        match self {
            Labels::MultiLabel { tag_names, tags } => Labels::MultiLabel {
                tag_names: tag_names.clone(),
                tags: tags
                    .iter()
                    .map(|t| rows.iter().map(|&r| t[r]).collect())
                    .collect(),
            },
            Labels::MultiClass { classes, n_classes } => Labels::MultiClass {
                classes: rows.iter().map(|&r| classes[r]).collect(),
                n_classes: *n_classes,
            },
        }
    }
}

/// Per-column train-split mean and standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Fits on the given rows of the matrix (population std, divisor N).
    pub fn fit(features: &Matrix, rows: &[usize]) -> Standardizer {
        let mut means = Vec::with_capacity(features.n_cols());
        let mut stds = Vec::with_capacity(features.n_cols());
        for j in 0..features.n_cols() {
            let (mean, std) = column_stats(features.col(j), rows);
            means.push(mean);
            stds.push(std);
        }
        Standardizer { means, stds }
    }

    /// Standardizes every column in place. Zero-variance columns become
    /// all-zero.
    pub fn apply(&self, features: &mut Matrix) {
        for j in 0..features.n_cols() {
            let mean = self.means[j];
            let std = self.stds[j];
            for v in features.col_mut(j) {
                *v = standardize_value(*v, mean, std);
            }
        }
    }

    pub fn destandardize(&self, features: &mut Matrix) {
        for j in 0..features.n_cols() {
            let mean = self.means[j];
            let std = self.stds[j];
            for v in features.col_mut(j) {
                *v = if std > 0.0 { *v * std + mean } else { mean };
            }
        }
    }
}

pub fn column_stats(col: &[f64], rows: &[usize]) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&r| col[r]).sum::<f64>() / n;
    let var = rows.iter().map(|&r| (col[r] - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn standardize_value(v: f64, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        (v - mean) / std
    } else {
        0.0
    }
}

/// Standardizes one column vector with precomputed train statistics.
pub fn standardize_column(col: &mut [f64], mean: f64, std: f64) {
    for v in col.iter_mut() {
        *v = standardize_value(*v, mean, std);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// An immutable dataset: standardized base features, labels, and splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub feature_table: FeatureTable,
    /// Base features, standardized with train statistics.
    pub features: Matrix,
    pub labels: Labels,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub standardizer: Standardizer,
}

impl Dataset {
    /// Builds a dataset from raw (unstandardized) features.
    pub fn from_raw(
        feature_names: Vec<String>,
        mut features: Matrix,
        labels: Labels,
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let n = features.n_rows();
        if labels.n_rows() != n {
            return Err(Error::Config(format!(
                "labels have {} rows, features have {n}",
                labels.n_rows()
            )));
        }
        let mut seen = vec![false; n];
        for (&idx, which) in train
            .iter()
            .map(|i| (i, "train"))
            .chain(val.iter().map(|i| (i, "val")))
            .chain(test.iter().map(|i| (i, "test")))
        {
            if idx >= n {
                return Err(Error::Config(format!(
                    "{which} split references row {idx} outside 0..{n}"
                )));
            }
            if seen[idx] {
                return Err(Error::Config(format!(
                    "row {idx} assigned to more than one split"
                )));
            }
            seen[idx] = true;
        }
        if train.is_empty() || val.is_empty() {
            return Err(Error::Config(
                "train and validation splits must be nonempty".into(),
            ));
        }
        let feature_table = FeatureTable::new(&feature_names)?;
        let standardizer = Standardizer::fit(&features, &train);
        standardizer.apply(&mut features);
        Ok(Dataset {
            feature_table,
            features,
            labels,
            train,
            val,
            test,
            standardizer,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.n_rows()
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

struct CsvTable {
    headers: Vec<String>,
    /// Row-major string cells.
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest {
            row: 0,
            column: String::new(),
            message: format!("{path:?}: {e}"),
        })?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Ingest {
            row: i + 1,
            column: String::new(),
            message: format!("{path:?}: {e}"),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Ingest {
                row: i + 1,
                column: String::new(),
                message: format!(
                    "{path:?}: ragged row, expected {} cells, got {}",
                    headers.len(),
                    record.len()
                ),
            });
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(CsvTable { headers, rows })
}

fn parse_cell(table: &CsvTable, row: usize, col: usize) -> Result<f64> {
    let cell = &table.rows[row][col];
    let err = |message: String| Error::Ingest {
        row: row + 1,
        column: table.headers[col].clone(),
        message,
    };
    if cell.is_empty() {
        return Err(err("missing cell".into()));
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| err(format!("non-numeric cell `{cell}`")))?;
    if !v.is_finite() {
        return Err(err(format!("non-finite value `{cell}`")));
    }
    Ok(v)
}

/// Loads a dataset from feature, label, and split CSV files.
///
/// A single label column named `class` holds multiclass class indices; any
/// other label columns are 0/1 tag indicators (multilabel), so a lone tag
/// column survives a round trip through CSV.
pub fn load_csv(features_path: &Path, labels_path: &Path, split_path: &Path) -> Result<Dataset> {
    let ftab = read_csv(features_path)?;
    let n = ftab.rows.len();
    let mut cols = vec![Vec::with_capacity(n); ftab.headers.len()];
    for r in 0..n {
        for c in 0..ftab.headers.len() {
            cols[c].push(parse_cell(&ftab, r, c)?);
        }
    }
    let features = Matrix::from_cols(cols);

    let ltab = read_csv(labels_path)?;
    if ltab.rows.len() != n {
        return Err(Error::Config(format!(
            "label file has {} rows, feature file has {n}",
            ltab.rows.len()
        )));
    }
    let labels = if ltab.headers.len() == 1 && ltab.headers[0] == "class" {
        let mut classes = Vec::with_capacity(n);
        for r in 0..n {
            let v = parse_cell(&ltab, r, 0)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Ingest {
                    row: r + 1,
                    column: ltab.headers[0].clone(),
                    message: format!("class index must be a nonnegative integer, got `{v}`"),
                });
            }
            classes.push(v as usize);
        }
        let n_classes = classes.iter().max().map_or(0, |m| m + 1);
        Labels::MultiClass { classes, n_classes }
    } else {
        let mut tags = vec![Vec::with_capacity(n); ltab.headers.len()];
        for r in 0..n {
            for c in 0..ltab.headers.len() {
                let v = parse_cell(&ltab, r, c)?;
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Ingest {
                        row: r + 1,
                        column: ltab.headers[c].clone(),
                        message: format!("tag indicator must be 0 or 1, got `{v}`"),
                    });
                }
                tags[c].push(v as u8);
            }
        }
        Labels::MultiLabel {
            tag_names: ltab.headers.clone(),
            tags,
        }
    };

    let stab = read_csv(split_path)?;
    if stab.headers.len() != 2 {
        return Err(Error::Config(
            "split file must have exactly two columns: row index and split".into(),
        ));
    }
    let mut assigned: BTreeMap<usize, Split> = BTreeMap::new();
    for (r, row) in stab.rows.iter().enumerate() {
        let idx: usize = row[0].parse().map_err(|_| Error::Ingest {
            row: r + 1,
            column: stab.headers[0].clone(),
            message: format!("invalid row index `{}`", row[0]),
        })?;
        let split = match row[1].as_str() {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => {
                return Err(Error::Ingest {
                    row: r + 1,
                    column: stab.headers[1].clone(),
                    message: format!("invalid split `{other}` (expected train/val/test)"),
                })
            }
        };
        if assigned.insert(idx, split).is_some() {
            return Err(Error::Config(format!(
                "row {idx} assigned to more than one split"
            )));
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for r in 0..n {
        match assigned.get(&r) {
            Some(Split::Train) => train.push(r),
            Some(Split::Val) => val.push(r),
            Some(Split::Test) => test.push(r),
            None => {
                return Err(Error::Config(format!("row {r} has no split assignment")));
            }
        }
    }
    Dataset::from_raw(ftab.headers, features, labels, train, val, test)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    ThresholdBinary,
    QuantileMulticlass(usize),
}

/// Recipe for a synthetic dataset with a planted composite feature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub n_base_features: usize,
    /// Prefix-form expression over columns named `x0..x{d-1}`.
    pub planted_expression: String,
    pub label_rule: LabelRule,
    pub noise_std: f64,
    pub seed: u64,
}

/// Generates a dataset with i.i.d. standard-normal base features and labels
/// driven by the planted expression plus Gaussian noise. Split is a
/// deterministic 60/20/20 shuffle of rows.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n_rows < 5 || spec.n_base_features == 0 {
        return Err(Error::Config(
            "synthetic spec needs at least 5 rows and 1 base feature".into(),
        ));
    }
    let names: Vec<String> = (0..spec.n_base_features).map(|i| format!("x{i}")).collect();
    let table = FeatureTable::new(&names)?;
    let planted: ExpressionTree = exprtree::parse(&spec.planted_expression, &table)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_rows;
    let mut cols = Vec::with_capacity(spec.n_base_features);
    for _ in 0..spec.n_base_features {
        cols.push((0..n).map(|_| normal_sample(&mut rng)).collect::<Vec<_>>());
    }
    let features = Matrix::from_cols(cols);

    let (mut latent, _) = planted.evaluate(&features)?;
    for v in latent.iter_mut() {
        *v += spec.noise_std * normal_sample(&mut rng);
    }

    let labels = match &spec.label_rule {
        LabelRule::ThresholdBinary => {
            let thr = median(&latent);
            Labels::MultiLabel {
                tag_names: vec!["target".into()],
                tags: vec![latent.iter().map(|&v| u8::from(v > thr)).collect()],
            }
        }
        LabelRule::QuantileMulticlass(k) => {
            if *k < 2 {
                return Err(Error::Config("quantile multiclass needs k >= 2".into()));
            }
            let mut sorted = latent.clone();
            sorted.sort_by(f64::total_cmp);
            let cuts: Vec<f64> = (1..*k)
                .map(|q| quantile_sorted(&sorted, q as f64 / *k as f64))
                .collect();
            let classes = latent
                .iter()
                .map(|&v| cuts.iter().filter(|&&c| v > c).count())
                .collect();
            Labels::MultiClass {
                classes,
                n_classes: *k,
            }
        }
    };

    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates with the same stream keeps generation deterministic.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (n as f64 * 0.6).round() as usize;
    let n_val = (n as f64 * 0.2).round() as usize;
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    Dataset::from_raw(names, features, labels, train, val, test)
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, one draw per call.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.5)
}

/// Quantile by linear interpolation over a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn load_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_file(dir.path(), "f.csv", "a,b\n1,2\n3,4\n5,6\n");
        let l = write_file(dir.path(), "l.csv", "t1,t2\n0,1\n1,0\n1,1\n");
        let s = write_file(
            dir.path(),
            "s.csv",
            "row,split\n0,train\n1,train\n2,val\n",
        );
        let ds = load_csv(&f, &l, &s).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.feature_table.names().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(ds.train, vec![0, 1]);
        assert_eq!(ds.val, vec![2]);
        assert!(ds.test.is_empty());
        match &ds.labels {
            Labels::MultiLabel { tag_names, tags } => {
                assert_eq!(tag_names, &vec!["t1".to_string(), "t2".to_string()]);
                assert_eq!(tags[0], vec![0, 1, 1]);
            }
            _ => panic!("expected multilabel"),
        }
    }

    #[test]
    fn single_label_column_is_multiclass() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_file(dir.path(), "f.csv", "a\n1\n2\n3\n4\n");
        let l = write_file(dir.path(), "l.csv", "class\n0\n1\n2\n1\n");
        let s = write_file(
            dir.path(),
            "s.csv",
            "row,split\n0,train\n1,train\n2,val\n3,test\n",
        );
        let ds = load_csv(&f, &l, &s).unwrap();
        match &ds.labels {
            Labels::MultiClass { classes, n_classes } => {
                assert_eq!(classes, &vec![0, 1, 2, 1]);
                assert_eq!(*n_classes, 3);
            }
            _ => panic!("expected multiclass"),
        }
    }

    #[test]
    fn ingestion_errors_carry_position() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_file(dir.path(), "f.csv", "a,b\n1,2\n3,oops\n");
        let l = write_file(dir.path(), "l.csv", "t1,t2\n0,1\n1,0\n");
        let s = write_file(dir.path(), "s.csv", "row,split\n0,train\n1,val\n");
        match load_csv(&f, &l, &s) {
            Err(Error::Ingest { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn missing_split_assignment_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_file(dir.path(), "f.csv", "a\n1\n2\n");
        let l = write_file(dir.path(), "l.csv", "c\n0\n1\n");
        let s = write_file(dir.path(), "s.csv", "row,split\n0,train\n");
        assert!(load_csv(&f, &l, &s).is_err());
    }

    #[test]
    fn constant_train_column_standardizes_to_zero() {
        let features = Matrix::from_cols(vec![vec![5.0, 5.0, 5.0, 9.0]]);
        let ds = Dataset::from_raw(
            vec!["a".into()],
            features,
            Labels::MultiClass {
                classes: vec![0, 1, 0, 1],
                n_classes: 2,
            },
            vec![0, 1, 2],
            vec![3],
            vec![],
        )
        .unwrap();
        assert_eq!(ds.features.col(0), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn standardizer_round_trip() {
        let mut features = Matrix::from_cols(vec![
            vec![1.0, 2.0, 3.0, 4.0],
            vec![-1.0, 0.5, 2.0, 8.0],
        ]);
        let original = features.clone();
        let rows = vec![0, 1, 2, 3];
        let std = Standardizer::fit(&features, &rows);
        std.apply(&mut features);
        for j in 0..2 {
            let (mean, sd) = column_stats(features.col(j), &rows);
            assert!(mean.abs() < 1e-9);
            assert!((sd - 1.0).abs() < 1e-9);
        }
        std.destandardize(&mut features);
        for j in 0..2 {
            for r in 0..4 {
                assert!((features.get(r, j) - original.get(r, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn synthetic_balanced_and_deterministic() {
        let spec = SyntheticSpec {
            n_rows: 200,
            n_base_features: 4,
            planted_expression: "(mul x0 x1)".into(),
            label_rule: LabelRule::ThresholdBinary,
            noise_std: 0.0,
            seed: 11,
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.train, b.train);
        match &a.labels {
            Labels::MultiLabel { tags, .. } => {
                let pos: usize = tags[0].iter().map(|&v| v as usize).sum();
                assert_eq!(pos, 100);
            }
            _ => panic!("expected binary"),
        }
        assert_eq!(a.train.len(), 120);
        assert_eq!(a.val.len(), 40);
        assert_eq!(a.test.len(), 40);
    }

    #[test]
    fn synthetic_multiclass_quantiles() {
        let spec = SyntheticSpec {
            n_rows: 300,
            n_base_features: 3,
            planted_expression: "(add x0 x2)".into(),
            label_rule: LabelRule::QuantileMulticlass(3),
            noise_std: 0.1,
            seed: 3,
        };
        let ds = generate_synthetic(&spec).unwrap();
        match &ds.labels {
            Labels::MultiClass { classes, n_classes } => {
                assert_eq!(*n_classes, 3);
                for k in 0..3 {
                    let count = classes.iter().filter(|&&c| c == k).count();
                    assert!((95..=105).contains(&count), "class {k} count {count}");
                }
            }
            _ => panic!("expected multiclass"),
        }
    }
}
