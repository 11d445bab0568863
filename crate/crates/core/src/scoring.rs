//! Concern degrees, interval punishments, per-sample scores, and the
//! dataset-level Meta Pattern Concern Score.

use crate::config::MpcsConfig;
use crate::error::{Error, Result};
use crate::metapattern::{build_meta_pattern, MetaPattern};
use crate::types::LabeledPrediction;

/// Levels of exactly 0 are replaced by this value before the log punishment,
/// keeping every per-sample score finite.
pub const LEVEL_EPSILON: f64 = 1e-7;

/// Per-position concern weights for one meta pattern.
///
/// Incorrect positions weigh 1, or the release factor when the confusion is
/// released; the correct position weighs as much as all incorrect positions
/// combined, so it always carries half of the normalized mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcernDegree {
    pub weights: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// One sample's score and the per-position punishments it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub value: f64,
    pub punishments: Vec<f64>,
}

/// Compute the concern weights for a meta pattern.
///
/// Release rules apply only when the true label is present in the pattern.
/// When every weight comes out 0 — a correct top-1 with `k = 1`, or a fully
/// released pattern with release factor 0 — the normalized weights take
/// their limiting values: all mass on the single position for `k = 1`,
/// otherwise half on the correct position and the rest spread uniformly.
pub fn concern_degree(pattern: &MetaPattern, cfg: &MpcsConfig) -> ConcernDegree {
    let k = pattern.labels.len();
    let mut weights = vec![1.0; k];
    if let Some(i) = pattern.correct_index {
        if let Some(rule) = cfg.rule_for(pattern.labels[i]) {
            for (j, &label) in pattern.labels.iter().enumerate() {
                if j != i && rule.released.contains(&label) {
                    weights[j] = cfg.release_factor;
                }
            }
        }
        // the correct position carries the combined weight of the others
        weights[i] = weights
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, w)| w)
            .sum();
    }
    let total: f64 = weights.iter().sum();
    let normalized = if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else if k == 1 {
        vec![1.0]
    } else {
        // limit of a vanishing release factor with everything released
        let i = pattern
            .correct_index
            .expect("zero total requires a correct position");
        let share = 0.5 / (k - 1) as f64;
        (0..k).map(|j| if j == i { 0.5 } else { share }).collect()
    };
    ConcernDegree {
        weights,
        normalized,
    }
}

/// Interval punishment of one confidence level: `-ln(level / (t - 1))`,
/// with zero levels clamped to [`LEVEL_EPSILON`].
fn punishment(level: u32, t: u32) -> f64 {
    let level = if level == 0 {
        LEVEL_EPSILON
    } else {
        f64::from(level)
    };
    -(level / f64::from(t - 1)).ln()
}

/// Score one meta pattern: the concern-weighted sum of interval punishments.
pub fn sample_score(pattern: &MetaPattern, degree: &ConcernDegree, cfg: &MpcsConfig) -> SampleScore {
    let punishments: Vec<f64> = pattern
        .levels
        .iter()
        .map(|&level| punishment(level, cfg.t))
        .collect();
    let value = punishments
        .iter()
        .zip(&degree.normalized)
        .map(|(p, n)| p * n)
        .sum();
    SampleScore { value, punishments }
}

/// Build the pattern, its concern degree, and the score for one sample.
pub fn score_sample(pred: &LabeledPrediction, cfg: &MpcsConfig) -> Result<SampleScore> {
    let pattern = build_meta_pattern(pred, cfg)?;
    let degree = concern_degree(&pattern, cfg);
    Ok(sample_score(&pattern, &degree, cfg))
}

/// Reusable buffers for the per-sample scoring loop, so evaluating a large
/// dataset does not allocate per sample.
struct ScoreScratch {
    /// Order-isomorphic integer keys of the probabilities, offset by one so
    /// zero can serve as the picked-already sentinel.
    keys: Vec<u64>,
    labels: Vec<usize>,
    /// Punishments per probability bucket `trunc(t * p)` for small `t`:
    /// one table for correct labels, one for incorrect ones.
    correct_table: Vec<f64>,
    incorrect_table: Vec<f64>,
    /// Released predictions per true label, as label bitmasks in 64-bit
    /// words; empty when the label has no rule.
    release_masks: Vec<Vec<u64>>,
    release_factor: f64,
}

/// Above this many intervals the punishment is computed directly instead of
/// being tabulated.
const PUNISHMENT_TABLE_LIMIT: u32 = 1 << 14;

/// Punishment of one label from its probability bucket `trunc(t * p)`,
/// through the table when it exists.
#[inline]
fn bucket_punishment(table: &[f64], bucket: i64, t: u32, is_correct: bool) -> f64 {
    match table.get(bucket as usize) {
        Some(&p) => p,
        None => {
            let raw = (i64::from(t) - bucket - 1).max(0) as u32;
            let level = if is_correct { t - raw - 1 } else { raw };
            punishment(level, t)
        }
    }
}

impl ScoreScratch {
    fn new(cfg: &MpcsConfig) -> Self {
        let t = cfg.t;
        let (correct_table, incorrect_table) = if t <= PUNISHMENT_TABLE_LIMIT {
            // bucket = trunc(t * p), one entry past t for p = 1.0
            (0..=t)
                .map(|bucket| {
                    let raw = (i64::from(t) - i64::from(bucket) - 1).max(0) as u32;
                    (punishment(t - raw - 1, t), punishment(raw, t))
                })
                .unzip()
        } else {
            (Vec::new(), Vec::new())
        };
        let max_label = cfg.rules.iter().map(|r| r.true_label).max();
        let mut release_masks = vec![Vec::new(); max_label.map_or(0, |m| m + 1)];
        for rule in &cfg.rules {
            let words = &mut release_masks[rule.true_label];
            for &label in &rule.released {
                let word = label / 64;
                if words.len() <= word {
                    words.resize(word + 1, 0);
                }
                words[word] |= 1u64 << (label % 64);
            }
        }
        ScoreScratch {
            keys: Vec::new(),
            labels: Vec::new(),
            correct_table,
            incorrect_table,
            release_masks,
            release_factor: cfg.release_factor,
        }
    }



    /// Same score as [`score_sample`] up to float rounding, exploiting that
    /// the value does not depend on the order of the pattern positions:
    /// with the correct label present it reduces to
    /// `punish_correct / 2 + sum(punish * w) / (2 * sum(w))` over the
    /// incorrect positions, and to the mean punishment otherwise. Selection
    /// runs on integer keys and nothing allocates per sample.
    #[allow(clippy::needless_range_loop)] // indexed loops measure faster here
    fn score(&mut self, pred: &LabeledPrediction, cfg: &MpcsConfig) -> Result<f64> {
        let c = pred.probs.len();
        let k = cfg.k;
        if k > c {
            return Err(Error::KExceedsClasses { k, class_count: c });
        }
        if pred.true_label >= c {
            return Err(Error::LabelRange {
                label: pred.true_label,
                class_count: c,
            });
        }
        let probs = pred.probs.as_slice();
        let correct_table = &self.correct_table;
        let incorrect_table = &self.incorrect_table;
        let release_factor = self.release_factor;

        // the bit patterns of non-negative floats sort like the floats, so
        // the top-k fall out of k integer argmax rounds; picked entries are
        // zeroed, which no live key can collide with thanks to the offset
        self.keys.resize(c, 0);
        self.labels.resize(k, 0);
        let keys = &mut self.keys[..c];
        let labels = &mut self.labels[..k];
        for i in 0..c {
            keys[i] = probs[i].to_bits() + 1;
        }
        let y = pred.true_label;
        let mut correct_index = usize::MAX;
        for slot in 0..k {
            // two independent running maxima halve the comparison chain
            let mut best_a = 0;
            let mut key_a = keys[0];
            let mut best_b = usize::MAX;
            let mut key_b = 0;
            let mut i = 1;
            while i + 1 < c {
                let (ka, kb) = (keys[i], keys[i + 1]);
                if ka > key_a {
                    key_a = ka;
                    best_a = i;
                }
                if kb > key_b {
                    key_b = kb;
                    best_b = i + 1;
                }
                i += 2;
            }
            if i < c && keys[i] > key_a {
                key_a = keys[i];
                best_a = i;
            }
            // ties prefer the lower index; each lane keeps the earliest of
            // its own equal keys, and across lanes the earlier index wins
            let best = if key_b > key_a || (key_b == key_a && best_b < best_a) {
                best_b
            } else {
                best_a
            };
            labels[slot] = best;
            keys[best] = 0;
            if best == y {
                correct_index = slot;
            }
        }
        let correct_present = correct_index != usize::MAX;

        // release only applies when the correct label made the pattern
        let mask_words: &[u64] = if correct_present {
            self.release_masks.get(y).map_or(&[], |w| w.as_slice())
        } else {
            &[]
        };

        let t = cfg.t;
        let t_f = f64::from(t);
        let mut correct_punishment = 0.0;
        let mut incorrect_weight = 0.0;
        let mut incorrect_weighted = 0.0;
        let mut incorrect_plain = 0.0;
        for pos in 0..k {
            let label = labels[pos];
            // truncation equals floor: the product is never negative
            let bucket = (t_f * probs[label]) as i64;
            if pos == correct_index {
                correct_punishment = bucket_punishment(correct_table, bucket, t, true);
            } else {
                let punish = bucket_punishment(incorrect_table, bucket, t, false);
                let released =
                    (mask_words.get(label / 64).copied().unwrap_or(0) >> (label % 64)) & 1 == 1;
                let w = if released { release_factor } else { 1.0 };
                incorrect_weight += w;
                incorrect_weighted += punish * w;
                incorrect_plain += punish;
            }
        }

        let value = if correct_present {
            if incorrect_weight > 0.0 {
                correct_punishment * 0.5 + incorrect_weighted / (2.0 * incorrect_weight)
            } else if k == 1 {
                correct_punishment
            } else {
                // limit of a vanishing release factor with everything released
                correct_punishment * 0.5 + incorrect_plain * (0.5 / (k - 1) as f64)
            }
        } else {
            incorrect_plain / k as f64
        };
        Ok(value)
    }
}

/// Dataset-level score: the mean of per-sample scores, accumulated in
/// ascending sample-id order so the reduction is deterministic regardless of
/// input ordering.
pub fn dataset_mpcs(preds: &[LabeledPrediction], cfg: &MpcsConfig) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut scratch = ScoreScratch::new(cfg);
    let mut total = 0.0;
    // optimistic pass assuming ids already ascending, the common layout
    let mut prev_id = 0;
    let mut sorted = true;
    for pred in preds {
        if pred.sample_id < prev_id {
            sorted = false;
            break;
        }
        prev_id = pred.sample_id;
        total += scratch
            .score(pred, cfg)
            .map_err(|e| Error::for_sample(pred.sample_id, e))?;
    }
    if !sorted {
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by_key(|&i| preds[i].sample_id);
        total = 0.0;
        for i in order {
            let pred = &preds[i];
            total += scratch
                .score(pred, cfg)
                .map_err(|e| Error::for_sample(pred.sample_id, e))?;
        }
    }
    Ok(total / preds.len() as f64)
}

/// Per-sample comparison of the top-1 score against cross entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct CeLimitReport {
    /// `(top-1 score, -ln(correct probability))` per correct-top-1 sample.
    pub pairs: Vec<(f64, f64)>,
    /// Sample ids whose top-1 prediction was wrong; the equivalence only
    /// binds when the top-1 label is correct, so these are left out.
    pub excluded: Vec<usize>,
}

/// For large `t` the `k = 1` score of a correctly classified sample
/// approaches its cross entropy; pair the two values for every
/// correct-top-1 sample so the caller can assert the tolerance.
pub fn ce_limit_check(preds: &[LabeledPrediction], t: u32) -> Result<CeLimitReport> {
    let cfg = MpcsConfig::new(1, t, 1.0, [])?;
    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    for pred in preds {
        if !pred.is_correct() {
            excluded.push(pred.sample_id);
            continue;
        }
        let score = score_sample(pred, &cfg)?;
        let ce = -pred.probs.get(pred.true_label).ln();
        pairs.push((score.value, ce));
    }
    Ok(CeLimitReport { pairs, excluded })
}
