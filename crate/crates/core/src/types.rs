//! Domain types shared by every other module: label spaces, validated
//! probability vectors, and labeled predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accepted deviation of a probability vector's sum from 1 before the input
/// is rejected as malformed rather than renormalized.
pub const PROB_SUM_TOLERANCE: f64 = 1e-3;

/// Below this deviation the vector is considered already normalized and is
/// left untouched, which keeps validation idempotent at the bit level.
const RENORM_SKIP: f64 = 1e-12;

/// Whether raw model outputs are logits (softmax applied on intake) or
/// probabilities (checked and renormalized).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Logits,
    Probs,
}

/// A c-class label space. Labels are dense integers in `[0, c)`; class names
/// are presentation-only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    class_count: usize,
    names: Option<Vec<String>>,
}

impl LabelSpace {
    pub fn new(class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::ClassCount(class_count));
        }
        Ok(LabelSpace {
            class_count,
            names: None,
        })
    }

    pub fn with_names(class_count: usize, names: Vec<String>) -> Result<Self> {
        let mut space = Self::new(class_count)?;
        if names.len() != class_count {
            return Err(Error::LengthMismatch {
                expected: class_count,
                got: names.len(),
            });
        }
        space.names = Some(names);
        Ok(space)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn name(&self, label: usize) -> Option<&str> {
        self.names.as_ref().and_then(|n| n.get(label)).map(|s| s.as_str())
    }

    pub fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.class_count {
            return Err(Error::LabelRange {
                label,
                class_count: self.class_count,
            });
        }
        Ok(())
    }
}

/// A normalized class-probability vector. Every entry lies in `[0, 1]` and
/// the entries sum to 1 (within a few ulp); the invariant is established by
/// the constructors and never broken afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validate raw probabilities: finite, in range, sum within
    /// [`PROB_SUM_TOLERANCE`] of 1. Vectors whose sum is off by more than a
    /// few ulp are renormalized by their sum.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let mut values = values;
        let mut sum = 0.0;
        for v in &mut values {
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            if !(0.0..=1.0 + PROB_SUM_TOLERANCE).contains(v) {
                return Err(Error::ProbabilityRange { value: *v });
            }
            // canonicalize -0.0 so bit-level orderings agree with numeric ones
            *v += 0.0;
            sum += *v;
        }
        let (lo, hi) = (1.0 - PROB_SUM_TOLERANCE, 1.0 + PROB_SUM_TOLERANCE);
        if !(lo..=hi).contains(&sum) {
            return Err(Error::ProbabilitySum { sum, lo, hi });
        }
        if (sum - 1.0).abs() > RENORM_SKIP {
            for v in &mut values {
                *v /= sum;
            }
        }
        Ok(ProbabilityVector(values))
    }

    /// Softmax over raw logits, shifted by the max entry for stability.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Ok(ProbabilityVector(exps.into_iter().map(|e| e / sum).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, label: usize) -> f64 {
        self.0[label]
    }

    /// Label with the highest probability; ties go to the lowest label index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// One sample's supervised label and validated probability output.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPrediction {
    pub sample_id: usize,
    pub true_label: usize,
    pub probs: ProbabilityVector,
}

impl LabeledPrediction {
    pub fn predicted_label(&self) -> usize {
        self.probs.argmax()
    }

    pub fn is_correct(&self) -> bool {
        self.predicted_label() == self.true_label
    }
}

/// Validate one raw prediction record against a label space.
///
/// In [`InputMode::Logits`] the values are softmaxed; in [`InputMode::Probs`]
/// they are checked and renormalized by their sum.
pub fn validate_prediction(
    sample_id: usize,
    true_label: usize,
    values: &[f64],
    space: &LabelSpace,
    mode: InputMode,
) -> Result<LabeledPrediction> {
    if values.len() != space.class_count() {
        return Err(Error::LengthMismatch {
            expected: space.class_count(),
            got: values.len(),
        });
    }
    space.check_label(true_label)?;
    let probs = match mode {
        InputMode::Logits => ProbabilityVector::from_logits(values)?,
        InputMode::Probs => ProbabilityVector::new(values.to_vec())?,
    };
    Ok(LabeledPrediction {
        sample_id,
        true_label,
        probs,
    })
}

/// Validate a whole batch, tagging any failure with its sample id.
pub fn validate_dataset(
    raw: impl IntoIterator<Item = (usize, usize, Vec<f64>)>,
    space: &LabelSpace,
    mode: InputMode,
) -> Result<Vec<LabeledPrediction>> {
    raw.into_iter()
        .map(|(id, label, values)| {
            validate_prediction(id, label, &values, space, mode)
                .map_err(|e| Error::for_sample(id, e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space(c: usize) -> LabelSpace {
        LabelSpace::new(c).unwrap()
    }

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let p = validate_prediction(0, 0, &[0.0, 0.0, 0.0], &space(3), InputMode::Logits).unwrap();
        for &v in p.probs.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_probs_pass_through_unchanged() {
        let p = validate_prediction(0, 0, &[0.5, 0.3, 0.2], &space(3), InputMode::Probs).unwrap();
        assert_eq!(p.probs.as_slice(), &[0.5, 0.3, 0.2]);
    }

    #[test]
    fn slightly_off_sum_is_renormalized() {
        let p =
            validate_prediction(0, 0, &[0.5005, 0.3, 0.2], &space(3), InputMode::Probs).unwrap();
        // frozen against a high-precision evaluation of v / 1.0005
        let expected = [
            0.5002498750624688,
            0.2998500749625187,
            0.19990004997501249,
        ];
        for (got, want) in p.probs.as_slice().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        let sum: f64 = p.probs.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed_inputs() {
        let s = space(3);
        assert!(matches!(
            validate_prediction(0, 0, &[0.5, 0.5], &s, InputMode::Probs),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            validate_prediction(0, 0, &[0.7, 0.2, 0.2], &s, InputMode::Probs),
            Err(Error::ProbabilitySum { .. })
        ));
        assert!(matches!(
            validate_prediction(0, 0, &[f64::NAN, 0.5, 0.5], &s, InputMode::Probs),
            Err(Error::NonFinite)
        ));
        assert!(matches!(
            validate_prediction(0, 3, &[0.2, 0.3, 0.5], &s, InputMode::Probs),
            Err(Error::LabelRange { .. })
        ));
        assert!(matches!(
            validate_prediction(0, 0, &[1.0005, -0.0005, 0.0], &s, InputMode::Probs),
            Err(Error::ProbabilityRange { .. })
        ));
    }

    #[test]
    fn label_space_bounds() {
        assert!(matches!(LabelSpace::new(1), Err(Error::ClassCount(1))));
        let named = LabelSpace::with_names(2, vec!["red".into(), "green".into()]).unwrap();
        assert_eq!(named.name(1), Some("green"));
    }

    #[test]
    fn argmax_ties_break_to_lowest_label() {
        let p = ProbabilityVector::new(vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        assert_eq!(p.argmax(), 0);
        let p = ProbabilityVector::new(vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(p.argmax(), 1);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-20.0f64..20.0, 2..8)) {
            let p = ProbabilityVector::from_logits(&logits).unwrap();
            let sum: f64 = p.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_is_permutation_equivariant(
            logits in proptest::collection::vec(-20.0f64..20.0, 3..8),
            rot in 0usize..8,
        ) {
            let n = logits.len();
            let rot = rot % n;
            let mut rotated = logits.clone();
            rotated.rotate_left(rot);
            let p = ProbabilityVector::from_logits(&logits).unwrap();
            let q = ProbabilityVector::from_logits(&rotated).unwrap();
            for i in 0..n {
                // the normalizing sum is accumulated in a different order,
                // so entries agree to rounding rather than bitwise
                prop_assert!((p.get((i + rot) % n) - q.get(i)).abs() < 1e-14);
            }
        }

        #[test]
        fn validation_is_idempotent(
            raw in proptest::collection::vec(0.0f64..1.0, 2..8),
            logits_mode in proptest::bool::ANY,
        ) {
            let s = LabelSpace::new(raw.len()).unwrap();
            let first = if logits_mode {
                validate_prediction(0, 0, &raw, &s, InputMode::Logits).unwrap()
            } else {
                let sum: f64 = raw.iter().sum();
                prop_assume!(sum > 0.5);
                let scaled: Vec<f64> = raw.iter().map(|v| v / sum).collect();
                validate_prediction(0, 0, &scaled, &s, InputMode::Probs).unwrap()
            };
            let second = validate_prediction(
                0,
                0,
                first.probs.as_slice(),
                &s,
                InputMode::Probs,
            )
            .unwrap();
            prop_assert_eq!(first.probs.as_slice(), second.probs.as_slice());
        }
    }
}
