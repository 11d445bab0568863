//! Meta pattern construction: the top-k prediction pattern and the
//! discretized confidence pattern derived from one validated prediction.

use crate::config::MpcsConfig;
use crate::error::{Error, Result};
use crate::types::{LabeledPrediction, ProbabilityVector};

/// Abstract representation of one probabilistic prediction: the top-k labels
/// in descending probability order and their confidence levels.
///
/// Levels live in `[0, t-1]` and are oriented so that *high is good*: a
/// confident correct label and an unconfident incorrect label both map near
/// `t-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPattern {
    /// Top-k labels, descending probability, ties broken by ascending label.
    pub labels: Vec<usize>,
    /// Confidence level per position, each in `[0, t-1]`.
    pub levels: Vec<u32>,
    /// Position of the true label within `labels`, when it made the cut.
    pub correct_index: Option<usize>,
}

/// The k labels with highest probability, descending; ties break toward the
/// lower label index so the pattern is deterministic.
pub fn prediction_pattern(probs: &ProbabilityVector, k: usize) -> Result<Vec<usize>> {
    let c = probs.len();
    if k > c {
        return Err(Error::KExceedsClasses { k, class_count: c });
    }
    let mut pairs: Vec<(f64, usize)> = probs.as_slice().iter().copied().zip(0..).collect();
    pairs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    pairs.truncate(k);
    Ok(pairs.into_iter().map(|(_, label)| label).collect())
}

/// Discretized confidence level of one label.
///
/// The raw level is `t - floor(t * c_i) - 1`, clamped to 0 at full
/// confidence; a correct label's level is then flipped to `t - 1 - raw` so
/// that confident-correct scores high. The result is always in `[0, t-1]`.
#[inline]
pub fn confidence_level(confidence: f64, t: u32, is_correct: bool) -> u32 {
    let t_i = i64::from(t);
    // truncation equals floor here because t * confidence is never negative
    let floored = (t as f64 * confidence) as i64;
    // raw is -1 only when confidence reaches 1.0 exactly
    let raw = (t_i - floored - 1).max(0);
    let level = if is_correct { t_i - raw - 1 } else { raw };
    level as u32
}

/// Build the meta pattern for one sample. The correct-label flip applies
/// only when the true label appears among the top k.
pub fn build_meta_pattern(pred: &LabeledPrediction, cfg: &MpcsConfig) -> Result<MetaPattern> {
    if pred.true_label >= pred.probs.len() {
        return Err(Error::LabelRange {
            label: pred.true_label,
            class_count: pred.probs.len(),
        });
    }
    let labels = prediction_pattern(&pred.probs, cfg.k)?;
    let correct_index = labels.iter().position(|&l| l == pred.true_label);
    let levels = labels
        .iter()
        .enumerate()
        .map(|(pos, &label)| {
            confidence_level(pred.probs.get(label), cfg.t, correct_index == Some(pos))
        })
        .collect();
    Ok(MetaPattern {
        labels,
        levels,
        correct_index,
    })
}
