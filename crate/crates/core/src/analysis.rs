//! Interpretability reports over run logs: top-expression dumps,
//! co-occurrence matrices with conditional performance, anytime
//! trajectories, and distribution summaries.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{HofEntry, RunLog};
use crate::error::{Error, Result};
use crate::exprtree::scan_items;

/// Presence-based co-occurrence counts (rows x cols) with mean performance
/// conditioned on joint presence. For feature-pair reports rows and cols
/// are the same item list and the matrix is symmetric with self-pairs
/// excluded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CooccurrenceReport {
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
    pub pair_count: Vec<Vec<u32>>,
    pub conditional_mean: Vec<Vec<Option<f64>>>,
    /// Number of analyzed expressions containing each column item.
    pub support: Vec<u32>,
    pub source_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySeries {
    pub evaluation_index: Vec<u64>,
    pub best_so_far: Vec<f64>,
    pub running_average: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveNumberSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn entry_cmp(a: &HofEntry, b: &HofEntry) -> Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then(a.nodes.cmp(&b.nodes))
        .then(a.eval.cmp(&b.eval))
}

/// Merges hall-of-fame entries across runs, deduplicates by canonical
/// serialization (keeping the best record), sorts best-first, and truncates
/// to `k`.
pub fn top_expressions(logs: &[RunLog], k: usize) -> Result<Vec<HofEntry>> {
    if logs.is_empty() {
        return Err(Error::Config("no run logs provided".into()));
    }
    let mut merged: Vec<HofEntry> = logs
        .iter()
        .flat_map(|log| log.hall_of_fame.iter().cloned())
        .collect();
    merged.sort_by(entry_cmp);
    let mut seen = HashSet::new();
    merged.retain(|e| seen.insert(e.expr.clone()));
    merged.truncate(k);
    Ok(merged)
}

/// An expression contributes one count to a feature pair iff both features
/// appear as leaves anywhere in it; multiplicity is ignored and self-pairs
/// are excluded.
pub fn feature_pair_cooccurrence(entries: &[HofEntry]) -> Result<CooccurrenceReport> {
    if entries.is_empty() {
        return Err(Error::Config("no expressions to analyze".into()));
    }
    let scanned: Vec<(BTreeSet<String>, f64)> = entries
        .iter()
        .map(|e| scan_items(&e.expr).map(|(_, feats)| (feats, e.raw_metric)))
        .collect::<Result<_>>()?;
    let mut names = BTreeSet::new();
    for (feats, _) in &scanned {
        names.extend(feats.iter().cloned());
    }
    let names: Vec<String> = names.into_iter().collect();
    let index: BTreeMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let d = names.len();
    let mut count = vec![vec![0u32; d]; d];
    let mut sum = vec![vec![0.0f64; d]; d];
    let mut support = vec![0u32; d];
    for (feats, metric) in &scanned {
        let ids: Vec<usize> = feats.iter().map(|f| index[f.as_str()]).collect();
        for &i in &ids {
            support[i] += 1;
        }
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                count[i][j] += 1;
                count[j][i] += 1;
                sum[i][j] += metric;
                sum[j][i] += metric;
            }
        }
    }
    let conditional_mean = mean_matrix(&count, &sum);
    Ok(CooccurrenceReport {
        row_names: names.clone(),
        col_names: names,
        pair_count: count,
        conditional_mean,
        support,
        source_size: entries.len(),
    })
}

/// Rows are operators, columns features; an expression contributes to
/// (op, feature) iff the operator appears anywhere and the feature appears
/// as a leaf anywhere in the same expression.
pub fn operator_feature_stats(entries: &[HofEntry]) -> Result<CooccurrenceReport> {
    if entries.is_empty() {
        return Err(Error::Config("no expressions to analyze".into()));
    }
    let scanned: Vec<(BTreeSet<String>, BTreeSet<String>, f64)> = entries
        .iter()
        .map(|e| scan_items(&e.expr).map(|(ops, feats)| (ops, feats, e.raw_metric)))
        .collect::<Result<_>>()?;
    let mut op_names = BTreeSet::new();
    let mut feat_names = BTreeSet::new();
    for (ops, feats, _) in &scanned {
        op_names.extend(ops.iter().cloned());
        feat_names.extend(feats.iter().cloned());
    }
    let op_names: Vec<String> = op_names.into_iter().collect();
    let feat_names: Vec<String> = feat_names.into_iter().collect();
    let op_index: BTreeMap<&str, usize> = op_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let feat_index: BTreeMap<&str, usize> = feat_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut count = vec![vec![0u32; feat_names.len()]; op_names.len()];
    let mut sum = vec![vec![0.0f64; feat_names.len()]; op_names.len()];
    let mut support = vec![0u32; feat_names.len()];
    for (ops, feats, metric) in &scanned {
        for f in feats {
            support[feat_index[f.as_str()]] += 1;
        }
        for op in ops {
            let i = op_index[op.as_str()];
            for f in feats {
                let j = feat_index[f.as_str()];
                count[i][j] += 1;
                sum[i][j] += metric;
            }
        }
    }
    let conditional_mean = mean_matrix(&count, &sum);
    Ok(CooccurrenceReport {
        row_names: op_names,
        col_names: feat_names,
        pair_count: count,
        conditional_mean,
        support,
        source_size: entries.len(),
    })
}

fn mean_matrix(count: &[Vec<u32>], sum: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    count
        .iter()
        .zip(sum)
        .map(|(crow, srow)| {
            crow.iter()
                .zip(srow)
                .map(|(&c, &s)| if c > 0 { Some(s / f64::from(c)) } else { None })
                .collect()
        })
        .collect()
}

/// Best-so-far and running-average fitness versus evaluation count, in the
/// logged order.
pub fn trajectory(log: &RunLog) -> Result<TrajectorySeries> {
    if log.evaluations.is_empty() {
        return Err(Error::Config("run log has no evaluations".into()));
    }
    let mut evaluation_index = Vec::with_capacity(log.evaluations.len());
    let mut best_so_far = Vec::with_capacity(log.evaluations.len());
    let mut running_average = Vec::with_capacity(log.evaluations.len());
    let mut best = f64::NEG_INFINITY;
    let mut total = 0.0;
    for (i, record) in log.evaluations.iter().enumerate() {
        best = best.max(record.fitness);
        total += record.fitness;
        evaluation_index.push(record.eval);
        best_so_far.push(best);
        running_average.push(total / (i + 1) as f64);
    }
    Ok(TrajectorySeries {
        evaluation_index,
        best_so_far,
        running_average,
    })
}

/// Five-number summary with linearly interpolated quartiles.
pub fn distribution_summary(final_metrics: &[f64]) -> Result<FiveNumberSummary> {
    if final_metrics.is_empty() {
        return Err(Error::Config("empty metric sequence".into()));
    }
    let mut sorted = final_metrics.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(FiveNumberSummary {
        min: sorted[0],
        q1: crate::data::quantile_sorted(&sorted, 0.25),
        median: crate::data::quantile_sorted(&sorted, 0.5),
        q3: crate::data::quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Writes a symmetric report as a combined-triangle CSV: lower triangle
/// counts, upper triangle conditional means, diagonal blank.
pub fn write_combined_triangle_csv<W: Write>(
    report: &CooccurrenceReport,
    mut w: W,
) -> std::io::Result<()> {
    write!(w, "item")?;
    for name in &report.col_names {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for (i, name) in report.row_names.iter().enumerate() {
        write!(w, "{name}")?;
        for j in 0..report.col_names.len() {
            match i.cmp(&j) {
                Ordering::Greater => write!(w, ",{}", report.pair_count[i][j])?,
                Ordering::Equal => write!(w, ",")?,
                Ordering::Less => match report.conditional_mean[i][j] {
                    Some(m) => write!(w, ",{m:.6}")?,
                    None => write!(w, ",")?,
                },
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Writes a rectangular report as two CSVs: counts and conditional means.
pub fn write_rectangular_csvs(
    report: &CooccurrenceReport,
    counts_path: &Path,
    means_path: &Path,
) -> Result<()> {
    let write_one = |path: &Path, means: bool| -> Result<()> {
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
        );
        let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
        write!(w, "item").map_err(io_err)?;
        for name in &report.col_names {
            write!(w, ",{name}").map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
        for (i, name) in report.row_names.iter().enumerate() {
            write!(w, "{name}").map_err(io_err)?;
            for j in 0..report.col_names.len() {
                if means {
                    match report.conditional_mean[i][j] {
                        Some(m) => write!(w, ",{m:.6}").map_err(io_err)?,
                        None => write!(w, ",").map_err(io_err)?,
                    }
                } else {
                    write!(w, ",{}", report.pair_count[i][j]).map_err(io_err)?;
                }
            }
            writeln!(w).map_err(io_err)?;
        }
        Ok(())
    };
    write_one(counts_path, false)?;
    write_one(means_path, true)
}

pub fn write_trajectory_csv<W: Write>(series: &TrajectorySeries, mut w: W) -> std::io::Result<()> {
    writeln!(w, "eval,best_so_far,running_average")?;
    for i in 0..series.evaluation_index.len() {
        writeln!(
            w,
            "{},{},{}",
            series.evaluation_index[i], series.best_so_far[i], series.running_average[i]
        )?;
    }
    Ok(())
}

/// Minimal SVG heatmap of the conditional-mean matrix, fixed blue-to-red
/// scale over [0, 1]; cells without data are grey. Plumbing for quick
/// visual inspection of reports.
pub fn render_heatmap_svg(report: &CooccurrenceReport, path: &Path) -> Result<()> {
    const CELL: usize = 14;
    const MARGIN: usize = 120;
    let width = MARGIN + CELL * report.col_names.len() + 10;
    let height = MARGIN + CELL * report.row_names.len() + 10;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n"
    ));
    svg.push_str(&format!(
        "<!-- conditional mean performance, color scale fixed to [0,1] over {} expressions -->\n",
        report.source_size
    ));
    for (i, _) in report.row_names.iter().enumerate() {
        for (j, _) in report.col_names.iter().enumerate() {
            let color = match report.conditional_mean[i][j] {
                Some(v) => {
                    let t = v.clamp(0.0, 1.0);
                    let r = (t * 255.0).round() as u8;
                    let b = ((1.0 - t) * 255.0).round() as u8;
                    format!("rgb({r},60,{b})")
                }
                None => "rgb(220,220,220)".to_string(),
            };
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{color}\"/>\n",
                MARGIN + j * CELL,
                MARGIN + i * CELL
            ));
        }
    }
    for (j, name) in report.col_names.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"8\" transform=\"rotate(-60 {} {})\">{}</text>\n",
            MARGIN + j * CELL + 4,
            MARGIN - 4,
            MARGIN + j * CELL + 4,
            MARGIN - 4,
            name
        ));
    }
    for (i, name) in report.row_names.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"2\" y=\"{}\" font-size=\"8\">{}</text>\n",
            MARGIN + i * CELL + 10,
            name
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path.display().to_string(), e))
}
