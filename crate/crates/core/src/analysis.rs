//! Trajectory analysis over training checkpoints: Spearman similarity
//! between metric series, checkpoint selection, and trade-off comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::MpcsConfig;
use crate::error::{Error, Result};
use crate::metrics::{dangerous_count, MetricReport};
use crate::types::LabeledPrediction;

/// Optimization direction of a metric series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

/// Direction of a named metric, for every name [`MetricReport::get`] accepts.
pub fn metric_direction(metric: &str) -> Option<Direction> {
    Some(match metric {
        "accuracy" | "precision" | "recall" | "f1" | "mcc" => Direction::HigherIsBetter,
        "ms" | "ce" | "mpcs" | "dangerous" => Direction::LowerIsBetter,
        _ => return None,
    })
}

/// One metric's per-epoch series.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTrajectory {
    pub name: String,
    pub values: Vec<f64>,
    pub direction: Direction,
}

/// One training epoch's snapshot: its predictions (when retained) and the
/// full metric report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub epoch: usize,
    pub predictions: Option<Vec<LabeledPrediction>>,
    pub report: MetricReport,
}

/// Average ranks of a series, ties receiving the mean of their rank range.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the value; give each the mean rank
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling.
///
/// Returns `None` when either series has zero rank variance (a constant
/// series), where the coefficient is undefined.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::SeriesLength {
            a: a.len(),
            b: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::SeriesLength {
            a: a.len(),
            b: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    // ranks of n values always average to (n + 1) / 2
    let mean = (ra.len() + 1) as f64 / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for i in 0..ra.len() {
        let da = ra[i] - mean;
        let db = rb[i] - mean;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(None);
    }
    Ok(Some((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0)))
}

/// Spearman similarity of the target trajectory against every other one.
pub fn similarity_table(
    trajectories: &[MetricTrajectory],
    target: &str,
) -> Result<BTreeMap<String, Option<f64>>> {
    let target_traj = trajectories
        .iter()
        .find(|t| t.name == target)
        .ok_or_else(|| Error::UnknownMetric(target.to_string()))?;
    let mut table = BTreeMap::new();
    for traj in trajectories {
        if traj.name == target {
            continue;
        }
        table.insert(
            traj.name.clone(),
            spearman(&target_traj.values, &traj.values)?,
        );
    }
    Ok(table)
}

/// Build the benchmark-plus-MPCS trajectories from checkpoint records.
pub fn trajectories(records: &[CheckpointRecord]) -> Vec<MetricTrajectory> {
    ["accuracy", "f1", "mcc", "ms", "ce", "mpcs", "dangerous"]
        .iter()
        .map(|&name| MetricTrajectory {
            name: name.to_string(),
            values: records
                .iter()
                .map(|r| r.report.get(name).expect("registered metric"))
                .collect(),
            direction: metric_direction(name).expect("registered metric"),
        })
        .collect()
}

/// Pick the checkpoint optimizing the metric in its direction; ties go to
/// the earliest epoch.
pub fn select_checkpoint<'a>(
    records: &'a [CheckpointRecord],
    metric: &str,
) -> Result<&'a CheckpointRecord> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let direction =
        metric_direction(metric).ok_or_else(|| Error::UnknownMetric(metric.to_string()))?;
    let mut best = &records[0];
    let mut best_value = best
        .report
        .get(metric)
        .ok_or_else(|| Error::UnknownMetric(metric.to_string()))?;
    for record in &records[1..] {
        let value = record.report.get(metric).expect("checked above");
        let better = match direction {
            Direction::LowerIsBetter => value < best_value,
            Direction::HigherIsBetter => value > best_value,
        };
        if better {
            best = record;
            best_value = value;
        }
    }
    Ok(best)
}

/// Accuracy, error, and dangerous-case comparison between two checkpoints.
/// Deltas are `b - a`, so swapping the arguments negates them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub epoch_a: usize,
    pub epoch_b: usize,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub accuracy_delta: f64,
    pub errors_a: usize,
    pub errors_b: usize,
    pub errors_delta: i64,
    pub dangerous_a: usize,
    pub dangerous_b: usize,
    pub dangerous_delta: i64,
    /// Dangerous cases per misclassification; 0 when there are no errors.
    pub destructive_rate_a: f64,
    pub destructive_rate_b: f64,
}

fn error_stats(preds: &[LabeledPrediction], cfg: &MpcsConfig) -> (usize, usize, f64) {
    let errors = preds.iter().filter(|p| !p.is_correct()).count();
    let dangerous = dangerous_count(preds, cfg);
    let rate = if errors == 0 {
        0.0
    } else {
        dangerous as f64 / errors as f64
    };
    (errors, dangerous, rate)
}

/// Compare two checkpoints on accuracy, error counts, dangerous cases, and
/// destructive rate. Both records must carry their prediction dumps.
pub fn tradeoff_report(
    a: &CheckpointRecord,
    b: &CheckpointRecord,
    cfg: &MpcsConfig,
) -> Result<TradeoffReport> {
    let preds_a = a.predictions.as_ref().ok_or(Error::MissingDump)?;
    let preds_b = b.predictions.as_ref().ok_or(Error::MissingDump)?;
    let (errors_a, dangerous_a, rate_a) = error_stats(preds_a, cfg);
    let (errors_b, dangerous_b, rate_b) = error_stats(preds_b, cfg);
    Ok(TradeoffReport {
        epoch_a: a.epoch,
        epoch_b: b.epoch,
        accuracy_a: a.report.accuracy,
        accuracy_b: b.report.accuracy,
        accuracy_delta: b.report.accuracy - a.report.accuracy,
        errors_a,
        errors_b,
        errors_delta: errors_b as i64 - errors_a as i64,
        dangerous_a,
        dangerous_b,
        dangerous_delta: dangerous_b as i64 - dangerous_a as i64,
        destructive_rate_a: rate_a,
        destructive_rate_b: rate_b,
    })
}
