//! Confusion matrix, the classic benchmark measures, the MS and CE losses,
//! and the combined per-checkpoint metric report.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{CeReduction, LogBase, MpcsConfig};
use crate::error::{Error, Result};
use crate::scoring::dataset_mpcs;
use crate::types::{LabelSpace, LabeledPrediction};

/// Probabilities are clamped here before the cross-entropy log so the loss
/// stays finite on hard-zero outputs.
const CE_PROB_FLOOR: f64 = 1e-12;

/// A c-by-c count matrix; rows are actual classes, columns predicted ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
}

/// One-vs-rest breakdown for a single target class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassStats {
    pub tpc: u64,
    pub fnc: u64,
    pub fpc: u64,
    pub tnc: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Array2<u64>) -> Result<Self> {
        if counts.nrows() != counts.ncols() || counts.nrows() < 2 {
            return Err(Error::ClassCount(counts.nrows()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn class_count(&self) -> usize {
        self.counts.nrows()
    }

    pub fn count(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[(actual, predicted)]
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    pub fn trace(&self) -> u64 {
        self.counts.diag().sum()
    }

    fn row_sum(&self, r: usize) -> u64 {
        self.counts.row(r).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.column(c).sum()
    }
}

/// Tally argmax predictions into a confusion matrix; argmax ties break
/// toward the lower label.
pub fn confusion_matrix(
    preds: &[LabeledPrediction],
    space: &LabelSpace,
) -> Result<ConfusionMatrix> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let c = space.class_count();
    let mut counts = Array2::<u64>::zeros((c, c));
    for pred in preds {
        space.check_label(pred.true_label)?;
        counts[(pred.true_label, pred.predicted_label())] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

/// True/false positive/negative counts for one target class.
pub fn per_class_stats(matrix: &ConfusionMatrix, label: usize) -> ClassStats {
    let tpc = matrix.count(label, label);
    let fnc = matrix.row_sum(label) - tpc;
    let fpc = matrix.col_sum(label) - tpc;
    // add tpc before subtracting so the unsigned arithmetic cannot dip negative
    let tnc = matrix.total() + tpc - matrix.row_sum(label) - matrix.col_sum(label);
    ClassStats { tpc, fnc, fpc, tnc }
}

/// The confusion-matrix measures: accuracy plus macro-averaged one-vs-rest
/// precision, recall, F1, and the generalized multi-class MCC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub mcc: f64,
}

/// Compute the benchmark measures from a confusion matrix. Per-class ratios
/// with a zero denominator contribute 0 to the macro means.
pub fn measures(matrix: &ConfusionMatrix) -> Measures {
    let c = matrix.class_count();
    let total = matrix.total() as f64;
    let accuracy = matrix.trace() as f64 / total;

    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for label in 0..c {
        let s = per_class_stats(matrix, label);
        let p = ratio(s.tpc, s.tpc + s.fpc);
        let r = ratio(s.tpc, s.tpc + s.fnc);
        precision_sum += p;
        recall_sum += r;
        if p + r > 0.0 {
            f1_sum += 2.0 * p * r / (p + r);
        }
    }

    Measures {
        accuracy,
        macro_precision: precision_sum / c as f64,
        macro_recall: recall_sum / c as f64,
        macro_f1: f1_sum / c as f64,
        mcc: multiclass_mcc(matrix),
    }
}

/// Generalized multi-class MCC: the covariance of the actual and predicted
/// label indicators over the matrix, normalized by their variances. A zero
/// denominator (all mass in one row or column) yields 0.
fn multiclass_mcc(matrix: &ConfusionMatrix) -> f64 {
    let c = matrix.class_count();
    // counts are at most ~1e9 per cell in practice, so f64 stays exact here
    let total: f64 = matrix.total() as f64;
    let trace: f64 = matrix.trace() as f64;
    let mut row_col = 0.0;
    let mut row_sq = 0.0;
    let mut col_sq = 0.0;
    for i in 0..c {
        let row = matrix.row_sum(i) as f64;
        let col = matrix.col_sum(i) as f64;
        row_col += row * col;
        row_sq += row * row;
        col_sq += col * col;
    }
    let numerator = total * trace - row_col;
    let denominator = ((total * total - row_sq) * (total * total - col_sq)).sqrt();
    if denominator == 0.0 {
        0.0
    } else {
        numerator / denominator
    }
}

/// Mean squared error against one-hot targets, halved per convention.
pub fn ms_loss(preds: &[LabeledPrediction], space: &LabelSpace) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let c = space.class_count();
    let mut total = 0.0;
    for pred in preds {
        space.check_label(pred.true_label)?;
        for label in 0..c {
            let target = if label == pred.true_label { 1.0 } else { 0.0 };
            let diff = pred.probs.get(label) - target;
            total += diff * diff;
        }
    }
    Ok(total / (2.0 * preds.len() as f64))
}

/// Cross entropy of one-hot targets with the requested log base and
/// reduction. The default pair `(e, mean)` is the usual training loss.
pub fn ce_loss(
    preds: &[LabeledPrediction],
    base: LogBase,
    reduction: CeReduction,
) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for pred in preds {
        let p = pred.probs.get(pred.true_label).max(CE_PROB_FLOOR);
        total -= match base {
            LogBase::E => p.ln(),
            LogBase::Ten => p.log10(),
        };
    }
    Ok(match reduction {
        CeReduction::Mean => total / preds.len() as f64,
        CeReduction::Sum => total,
    })
}

/// Number of misclassified samples whose (true, predicted) pair is not
/// covered by any release rule.
pub fn dangerous_count(preds: &[LabeledPrediction], cfg: &MpcsConfig) -> usize {
    preds
        .iter()
        .filter(|p| {
            let predicted = p.predicted_label();
            predicted != p.true_label && !cfg.releases(p.true_label, predicted)
        })
        .count()
}

/// Every metric tracked per checkpoint, flat so reports serialize as a
/// plain metric-name-to-value object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub mcc: f64,
    pub ms_loss: f64,
    pub ce_loss: f64,
    pub mpcs: f64,
    pub dangerous_count: usize,
}

impl MetricReport {
    /// Evaluate everything in one pass over the dataset.
    pub fn compute(
        preds: &[LabeledPrediction],
        space: &LabelSpace,
        cfg: &MpcsConfig,
    ) -> Result<Self> {
        cfg.validate_for_space(space)?;
        let matrix = confusion_matrix(preds, space)?;
        let m = measures(&matrix);
        Ok(MetricReport {
            accuracy: m.accuracy,
            macro_precision: m.macro_precision,
            macro_recall: m.macro_recall,
            macro_f1: m.macro_f1,
            mcc: m.mcc,
            ms_loss: ms_loss(preds, space)?,
            ce_loss: ce_loss(preds, cfg.log_base, cfg.ce_reduction)?,
            mpcs: dataset_mpcs(preds, cfg)?,
            dangerous_count: dangerous_count(preds, cfg),
        })
    }

    /// Look a metric up by its report name.
    pub fn get(&self, metric: &str) -> Option<f64> {
        Some(match metric {
            "accuracy" => self.accuracy,
            "precision" => self.macro_precision,
            "recall" => self.macro_recall,
            "f1" => self.macro_f1,
            "mcc" => self.mcc,
            "ms" => self.ms_loss,
            "ce" => self.ce_loss,
            "mpcs" => self.mpcs,
            "dangerous" => self.dangerous_count as f64,
            _ => return None,
        })
    }

    /// Names accepted by [`MetricReport::get`], in report order.
    pub fn metric_names() -> &'static [&'static str] {
        &[
            "accuracy",
            "precision",
            "recall",
            "f1",
            "mcc",
            "ms",
            "ce",
            "mpcs",
            "dangerous",
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{validate_prediction, InputMode};
    use ndarray::array;

    fn pred(id: usize, true_label: usize, probs: &[f64]) -> LabeledPrediction {
        let space = LabelSpace::new(probs.len()).unwrap();
        validate_prediction(id, true_label, probs, &space, InputMode::Probs).unwrap()
    }

    /// Samples that produce exactly the requested confusion counts.
    fn samples_for(counts: &[[u64; 2]; 2]) -> Vec<LabeledPrediction> {
        let mut preds = Vec::new();
        for (actual, row) in counts.iter().enumerate() {
            for (predicted, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    let mut probs = vec![0.2, 0.2];
                    probs[predicted] = 0.8;
                    preds.push(pred(preds.len(), actual, &probs));
                }
            }
        }
        preds
    }

    #[test]
    fn counts_argmax_predictions() {
        let space = LabelSpace::new(2).unwrap();
        let m = confusion_matrix(&[pred(0, 0, &[0.9, 0.1])], &space).unwrap();
        assert_eq!(m.count(0, 0), 1);
        assert_eq!(m.total(), 1);

        let m = confusion_matrix(&samples_for(&[[5, 1], [2, 4]]), &space).unwrap();
        assert_eq!(m.counts, array![[5, 1], [2, 4]]);

        // uniform probabilities tie-break to label 0
        let space3 = LabelSpace::new(3).unwrap();
        let m = confusion_matrix(&[pred(0, 1, &[1.0 / 3.0; 3])], &space3).unwrap();
        assert_eq!(m.count(1, 0), 1);

        assert!(matches!(
            confusion_matrix(&[], &space),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn per_class_breakdown() {
        let m = ConfusionMatrix::from_counts(array![[5, 1], [2, 4]]).unwrap();
        let s = per_class_stats(&m, 0);
        assert_eq!((s.tpc, s.fnc, s.fpc, s.tnc), (5, 1, 2, 4));

        let diag = ConfusionMatrix::from_counts(array![[3, 0], [0, 7]]).unwrap();
        let s = per_class_stats(&diag, 1);
        assert_eq!((s.fnc, s.fpc), (0, 0));

        let m = ConfusionMatrix::from_counts(array![[0, 3], [0, 0]]).unwrap();
        let s = per_class_stats(&m, 0);
        assert_eq!((s.tpc, s.fnc, s.fpc, s.tnc), (0, 3, 0, 0));
    }

    #[test]
    fn measures_on_the_worked_matrix() {
        let m = ConfusionMatrix::from_counts(array![[5, 1], [2, 4]]).unwrap();
        let r = measures(&m);
        assert!((r.accuracy - 0.75).abs() < 1e-15);
        // class 0: precision 5/7, recall 5/6, F1 10/13
        let s = per_class_stats(&m, 0);
        let p0 = s.tpc as f64 / (s.tpc + s.fpc) as f64;
        let r0 = s.tpc as f64 / (s.tpc + s.fnc) as f64;
        assert!((p0 - 0.7142857142857143).abs() < 1e-15);
        assert!((r0 - 0.8333333333333334).abs() < 1e-15);
        assert!((2.0 * p0 * r0 / (p0 + r0) - 0.7692307692307693).abs() < 1e-15);
        // generalized MCC equals the binary formula for c = 2
        assert!((r.mcc - 0.5070925528371099).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_degenerate_matrices() {
        let perfect = ConfusionMatrix::from_counts(array![[6, 0], [0, 6]]).unwrap();
        let r = measures(&perfect);
        assert_eq!(
            (r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1, r.mcc),
            (1.0, 1.0, 1.0, 1.0, 1.0)
        );

        // everything predicted as class 0 on balanced data: zero covariance
        let degenerate = ConfusionMatrix::from_counts(array![[6, 0], [6, 0]]).unwrap();
        assert_eq!(measures(&degenerate).mcc, 0.0);
    }

    #[test]
    fn binary_mcc_matches_the_generalized_formula() {
        for counts in [[[5u64, 1], [2, 4]], [[10, 3], [4, 2]], [[1, 7], [8, 1]]] {
            let m = ConfusionMatrix::from_counts(array![
                [counts[0][0], counts[0][1]],
                [counts[1][0], counts[1][1]]
            ])
            .unwrap();
            let s = per_class_stats(&m, 0);
            let (tp, fn_, fp, tn) = (s.tpc as f64, s.fnc as f64, s.fpc as f64, s.tnc as f64);
            let binary = (tp * tn - fp * fn_)
                / ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
            assert!((measures(&m).mcc - binary).abs() < 1e-12);
        }
    }

    #[test]
    fn ms_loss_cases() {
        let space = LabelSpace::new(3).unwrap();
        assert_eq!(
            ms_loss(&[pred(0, 0, &[1.0, 0.0, 0.0])], &space).unwrap(),
            0.0
        );
        let one = vec![pred(0, 0, &[0.5, 0.5, 0.0])];
        assert!((ms_loss(&one, &space).unwrap() - 0.25).abs() < 1e-15);
        let two = vec![pred(0, 0, &[0.5, 0.5, 0.0]), pred(1, 0, &[0.5, 0.5, 0.0])];
        assert!((ms_loss(&two, &space).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ce_loss_default_mode() {
        let one = vec![pred(0, 0, &[0.5, 0.3, 0.2])];
        let ce = ce_loss(&one, LogBase::E, CeReduction::Mean).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
        // the floor keeps hard zeros finite
        let zero = vec![pred(0, 0, &[0.0, 1.0, 0.0])];
        assert!(ce_loss(&zero, LogBase::E, CeReduction::Mean)
            .unwrap()
            .is_finite());
    }

    #[test]
    fn ce_loss_reproduces_the_confidence_threshold_scenario() {
        // classifier A: 99 correct at 0.99 plus one miss with the true
        // label at 0.49; classifier B: 100 correct at 0.98
        let mut a = Vec::new();
        for i in 0..99 {
            a.push(pred(i, 0, &[0.99, 0.005, 0.005]));
        }
        a.push(pred(99, 0, &[0.49, 0.51, 0.0]));
        let ce_a = ce_loss(&a, LogBase::Ten, CeReduction::Sum).unwrap();
        assert!((ce_a - 0.741920).abs() < 1e-6, "{ce_a}");

        let b: Vec<_> = (0..100).map(|i| pred(i, 0, &[0.98, 0.01, 0.01])).collect();
        let ce_b = ce_loss(&b, LogBase::Ten, CeReduction::Sum).unwrap();
        assert!((ce_b - 0.877392).abs() < 1e-6, "{ce_b}");
    }

    #[test]
    fn dangerous_cases_respect_the_release_list() {
        let cfg = MpcsConfig::new(
            1,
            10,
            0.5,
            [crate::config::ReleaseRule::new(0, [1]).unwrap()],
        )
        .unwrap();
        // errors (0 -> 1), (0 -> 2), (2 -> 1); only the first is released
        let preds = vec![
            pred(0, 0, &[0.1, 0.8, 0.1]),
            pred(1, 0, &[0.1, 0.1, 0.8]),
            pred(2, 2, &[0.1, 0.8, 0.1]),
        ];
        assert_eq!(dangerous_count(&preds, &cfg), 2);

        let perfect = vec![pred(0, 0, &[0.8, 0.1, 0.1])];
        assert_eq!(dangerous_count(&perfect, &cfg), 0);

        let no_rules = MpcsConfig::new(1, 10, 0.5, []).unwrap();
        assert_eq!(dangerous_count(&preds, &no_rules), 3);
    }

    #[test]
    fn accuracy_times_total_recovers_the_trace() {
        for counts in [[[5u64, 1], [2, 4]], [[1, 0], [0, 2]], [[997, 3], [11, 989]]] {
            let m = ConfusionMatrix::from_counts(array![
                [counts[0][0], counts[0][1]],
                [counts[1][0], counts[1][1]]
            ])
            .unwrap();
            let r = measures(&m);
            assert!((r.accuracy * m.total() as f64 - m.trace() as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn ce_drops_when_the_correct_probability_grows() {
        let mut last = f64::INFINITY;
        for step in 1..9 {
            let p = 0.1 * step as f64;
            let rest = (1.0 - p) / 2.0;
            let preds = vec![pred(0, 0, &[p, rest, rest])];
            let ce = ce_loss(&preds, LogBase::E, CeReduction::Mean).unwrap();
            assert!(ce >= 0.0 && ce < last);
            last = ce;
        }
    }

    #[test]
    fn dangerous_count_is_bounded_by_total_errors() {
        let cfg = MpcsConfig::new(
            1,
            10,
            0.5,
            [crate::config::ReleaseRule::new(0, [1]).unwrap()],
        )
        .unwrap();
        let uncovered = MpcsConfig::new(
            1,
            10,
            0.5,
            [crate::config::ReleaseRule::new(2, [0]).unwrap()],
        )
        .unwrap();
        // errors (0 -> 1) released under cfg, untouched by uncovered
        let preds = vec![
            pred(0, 0, &[0.1, 0.8, 0.1]),
            pred(1, 0, &[0.1, 0.8, 0.1]),
            pred(2, 1, &[0.1, 0.8, 0.1]),
        ];
        let errors = preds.iter().filter(|p| !p.is_correct()).count();
        assert!(dangerous_count(&preds, &cfg) <= errors);
        assert_eq!(dangerous_count(&preds, &cfg), 0);
        // a release list covering none of the observed pairs changes nothing
        assert_eq!(dangerous_count(&preds, &uncovered), errors);
    }

    #[test]
    fn full_report_round_trips_metric_names() {
        let space = LabelSpace::new(3).unwrap();
        let cfg = MpcsConfig::new(2, 10, 0.5, []).unwrap();
        let preds = vec![
            pred(0, 0, &[0.8, 0.1, 0.1]),
            pred(1, 1, &[0.2, 0.7, 0.1]),
            pred(2, 2, &[0.3, 0.3, 0.4]),
        ];
        let report = MetricReport::compute(&preds, &space, &cfg).unwrap();
        assert!(report.accuracy > 0.99);
        assert!(report.ms_loss >= 0.0 && report.ce_loss >= 0.0 && report.mpcs >= 0.0);
        for name in MetricReport::metric_names() {
            assert!(report.get(name).is_some(), "{name}");
        }
        assert!(report.get("nope").is_none());
    }
}
