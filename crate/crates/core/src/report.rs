//! Deterministic CSV report emission: per-instance length records, test
//! tables, boxplot summaries, and per-condition bookkeeping. All writers
//! funnel through one in-memory buffer per file, numeric fields use `.`
//! decimals with no grouping, and missing statistics are written as `n/a`,
//! so identical inputs produce byte-identical files.

use crate::contrastive::RelevanceRange;
use crate::error::{Error, Result};
use crate::harness::{ConditionStats, LengthRecord, R2Outcome, R2Row};
use crate::stats::StatTestResult;
use std::path::Path;

/// Five-number summary plus Tukey whiskers for one group of values.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Smallest value at or above `q1 - 1.5*IQR`.
    pub whisker_low: f64,
    /// Largest value at or below `q3 + 1.5*IQR`.
    pub whisker_high: f64,
    pub n_outliers: usize,
}

/// Linear-interpolation quantile (the common spreadsheet definition) of a
/// sorted nonempty slice, `p` in `[0, 1]`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "p must lie in [0,1]");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Computes the boxplot summary; `None` for an empty group.
pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let fence_low = q1 - 1.5 * iqr;
    let fence_high = q3 + 1.5 * iqr;
    let whisker_low = *sorted
        .iter()
        .find(|&&v| v >= fence_low)
        .expect("q1 is above the low fence");
    let whisker_high = *sorted
        .iter()
        .rev()
        .find(|&&v| v <= fence_high)
        .expect("q3 is below the high fence");
    let n_outliers = sorted
        .iter()
        .filter(|&&v| v < whisker_low || v > whisker_high)
        .count();
    Some(BoxStats {
        n: sorted.len(),
        min: sorted[0],
        q1,
        median,
        q3,
        max: *sorted.last().unwrap(),
        whisker_low,
        whisker_high,
        n_outliers,
    })
}

fn write_rows(path: &Path, rows: Vec<Vec<String>>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .write_record(&row)
            .map_err(|e| Error::ConfigParse {
                line: 0,
                details: format!("csv encoding failed: {e}"),
            })?;
    }
    let bytes = writer.into_inner().expect("in-memory csv writer");
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn s<T: std::fmt::Display>(v: T) -> String {
    v.to_string()
}

/// Writes an `instance_id,range,condition,length,match_id,similarity` table.
pub fn write_lengths_csv(path: &Path, records: &[LengthRecord]) -> Result<()> {
    let mut rows = vec![vec![
        s("instance_id"),
        s("range"),
        s("condition"),
        s("length"),
        s("match_id"),
        s("similarity"),
    ]];
    for r in records {
        rows.push(vec![
            r.instance_id.clone(),
            s(r.range.label()),
            r.condition.clone(),
            s(r.length),
            r.match_id.clone(),
            s(r.similarity),
        ]);
    }
    write_rows(path, rows)
}

/// Writes a single-row `test,statistic,df1,df2,p` table.
pub fn write_anova_csv(path: &Path, result: &StatTestResult) -> Result<()> {
    let rows = vec![
        vec![s("test"), s("statistic"), s("df1"), s("df2"), s("p")],
        vec![
            s(result.test_kind),
            s(result.statistic),
            s(result.df.0),
            s(result.df.1),
            s(result.p_value),
        ],
    ];
    write_rows(path, rows)
}

/// Writes the robustness table: one row per (augmentation, range) with the
/// paired t statistic, or `n/a` when the test was degenerate.
pub fn write_r2_table_csv(path: &Path, table: &[R2Row]) -> Result<()> {
    let mut rows = vec![vec![
        s("range"),
        s("augmentation"),
        s("t"),
        s("p"),
        s("mean_orig"),
        s("mean_aug"),
        s("n"),
    ]];
    for row in table {
        let (t, p) = match &row.outcome {
            R2Outcome::Test(r) => (s(r.statistic), s(r.p_value)),
            R2Outcome::ZeroVariance | R2Outcome::TooFewPairs => (s("n/a"), s("n/a")),
        };
        let fmt_mean = |m: Option<f64>| m.map(s).unwrap_or_else(|| s("n/a"));
        rows.push(vec![
            s(row.range.label()),
            row.augmentation.clone(),
            t,
            p,
            fmt_mean(row.mean_orig),
            fmt_mean(row.mean_aug),
            s(row.n),
        ]);
    }
    write_rows(path, rows)
}

/// Writes per-(condition, range) boxplot summaries.
pub fn write_summary_csv(
    path: &Path,
    groups: &[(String, RelevanceRange, BoxStats)],
) -> Result<()> {
    let mut rows = vec![vec![
        s("condition"),
        s("range"),
        s("n"),
        s("min"),
        s("q1"),
        s("median"),
        s("q3"),
        s("max"),
        s("whisker_low"),
        s("whisker_high"),
        s("n_outliers"),
    ]];
    for (condition, range, b) in groups {
        rows.push(vec![
            condition.clone(),
            s(range.label()),
            s(b.n),
            s(b.min),
            s(b.q1),
            s(b.median),
            s(b.q3),
            s(b.max),
            s(b.whisker_low),
            s(b.whisker_high),
            s(b.n_outliers),
        ]);
    }
    write_rows(path, rows)
}

/// Writes per-condition instance bookkeeping (how many test instances were
/// explained, and why the rest were dropped).
pub fn write_conditions_csv(path: &Path, stats: &[ConditionStats]) -> Result<()> {
    let mut rows = vec![vec![
        s("condition"),
        s("n_instances"),
        s("n_correct"),
        s("n_dropped_misclassified"),
        s("n_dropped_degenerate"),
        s("n_dropped_no_contrast"),
        s("n_explained"),
    ]];
    for c in stats {
        rows.push(vec![
            c.condition.clone(),
            s(c.n_instances),
            s(c.n_correct),
            s(c.n_dropped_misclassified),
            s(c.n_dropped_degenerate),
            s(c.n_dropped_no_contrast),
            s(c.n_explained),
        ]);
    }
    write_rows(path, rows)
}

/// Boxplot summaries of explanation length grouped by (condition, range),
/// ordered by condition then range.
pub fn length_summaries(records: &[LengthRecord]) -> Vec<(String, RelevanceRange, BoxStats)> {
    let mut conditions: Vec<&str> = records.iter().map(|r| r.condition.as_str()).collect();
    conditions.sort_unstable();
    conditions.dedup();
    let mut out = Vec::new();
    for condition in conditions {
        for range in RelevanceRange::ALL {
            let lengths: Vec<f64> = records
                .iter()
                .filter(|r| r.condition == condition && r.range == range)
                .map(|r| r.length as f64)
                .collect();
            if let Some(b) = box_stats(&lengths) {
                out.push((condition.to_string(), range, b));
            }
        }
    }
    out
}
