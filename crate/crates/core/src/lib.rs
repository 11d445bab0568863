//! Meta Pattern Concern Score (MPCS) for multi-class probabilistic classifiers.
//!
//! MPCS abstracts a classifier's probabilistic output into a *meta pattern* —
//! the top-k predicted labels together with discretized confidence levels —
//! and scores it under configurable human-value weights: confusions listed in
//! a release list are punished by a reduced factor, everything else at full
//! weight. The crate also ships the classic confusion-matrix measures and
//! loss values used as benchmarks, trajectory similarity analysis, checkpoint
//! selection, and a small MLP trainer whose learning rate can be modulated by
//! the score.
//!
//! The main entry points are [`scoring::dataset_mpcs`] for scoring a set of
//! predictions, [`metrics::MetricReport::compute`] for the full report, and
//! [`trainer::train`] for the desk-scale training loop.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod metapattern;
pub mod metrics;
pub mod scoring;
pub mod trainer;
pub mod types;

pub use config::{CeReduction, LogBase, MpcsConfig, ReleaseRule};
pub use error::{Error, ErrorKind, Result};
pub use types::{validate_prediction, InputMode, LabelSpace, LabeledPrediction, ProbabilityVector};
