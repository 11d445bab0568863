//! Score configuration: the hyper-parameters `k` and `t`, the release list,
//! and evaluation knobs, with a TOML file format behind `from_toml`/`to_toml`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{InputMode, LabelSpace};

/// Logarithm base used by the cross-entropy benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    #[serde(rename = "e")]
    E,
    #[serde(rename = "10")]
    Ten,
}

/// Whether cross entropy is averaged over the dataset or left as a sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CeReduction {
    Mean,
    Sum,
}

/// One release rule: predictions in `released` are considered less
/// destructive when the sample's true label is `true_label`. Rules are
/// one-directional; a symmetric pair needs two rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleaseRule {
    pub true_label: usize,
    pub released: BTreeSet<usize>,
}

impl ReleaseRule {
    pub fn new(true_label: usize, released: impl IntoIterator<Item = usize>) -> Result<Self> {
        let released: BTreeSet<usize> = released.into_iter().collect();
        if released.is_empty() {
            return Err(Error::Config(format!(
                "release rule for label {true_label} lists no released predictions"
            )));
        }
        if released.contains(&true_label) {
            return Err(Error::Config(format!(
                "release rule for label {true_label} releases its own true label"
            )));
        }
        Ok(ReleaseRule {
            true_label,
            released,
        })
    }
}

/// Full scoring and evaluation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcsConfig {
    /// Number of top-probability labels considered per sample (`1 <= k <= c`).
    pub k: usize,
    /// Number of confidence intervals (`t >= 2`).
    pub t: u32,
    /// Weight applied to released confusions, in `[0, 1]`; 1 disables releasing.
    pub release_factor: f64,
    /// Release rules, at most one per true label, sorted by true label.
    pub rules: Vec<ReleaseRule>,
    pub input_mode: InputMode,
    pub log_base: LogBase,
    pub ce_reduction: CeReduction,
}

impl Default for MpcsConfig {
    fn default() -> Self {
        MpcsConfig {
            k: 1,
            t: 2,
            release_factor: 1.0,
            rules: Vec::new(),
            input_mode: InputMode::Probs,
            log_base: LogBase::E,
            ce_reduction: CeReduction::Mean,
        }
    }
}

impl MpcsConfig {
    /// Build a validated config. Rules sharing a true label are merged by
    /// set union, since release membership is order-free.
    pub fn new(
        k: usize,
        t: u32,
        release_factor: f64,
        rules: impl IntoIterator<Item = ReleaseRule>,
    ) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config(format!("k must be at least 1, got {k}")));
        }
        if t < 2 {
            return Err(Error::Config(format!("t must be at least 2, got {t}")));
        }
        if !(0.0..=1.0).contains(&release_factor) {
            return Err(Error::Config(format!(
                "release_factor must be in [0, 1], got {release_factor}"
            )));
        }
        let mut merged: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for rule in rules {
            merged
                .entry(rule.true_label)
                .or_default()
                .extend(rule.released);
        }
        let rules = merged
            .into_iter()
            .map(|(label, released)| ReleaseRule::new(label, released))
            .collect::<Result<Vec<_>>>()?;
        Ok(MpcsConfig {
            k,
            t,
            release_factor,
            rules,
            ..MpcsConfig::default()
        })
    }

    /// Rule matching a sample's true label, if any. Rules are sorted, so a
    /// binary search suffices.
    pub fn rule_for(&self, true_label: usize) -> Option<&ReleaseRule> {
        self.rules
            .binary_search_by_key(&true_label, |r| r.true_label)
            .ok()
            .map(|i| &self.rules[i])
    }

    /// Whether the (true, predicted) pair is covered by a release rule.
    pub fn releases(&self, true_label: usize, predicted: usize) -> bool {
        self.rule_for(true_label)
            .is_some_and(|r| r.released.contains(&predicted))
    }

    /// Check the parts of the config that depend on the label space.
    pub fn validate_for_space(&self, space: &LabelSpace) -> Result<()> {
        if self.k > space.class_count() {
            return Err(Error::KExceedsClasses {
                k: self.k,
                class_count: space.class_count(),
            });
        }
        for rule in &self.rules {
            space.check_label(rule.true_label)?;
            for &label in &rule.released {
                space.check_label(label)?;
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: ConfigDoc =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        doc.try_into()
    }

    pub fn to_toml(&self) -> String {
        let doc = ConfigDoc::from(self);
        toml::to_string(&doc).expect("config serialization cannot fail")
    }
}

/// Load a config document. Convenience wrapper over [`MpcsConfig::from_toml`].
pub fn load_config(text: &str) -> Result<MpcsConfig> {
    MpcsConfig::from_toml(text)
}

/// On-disk layout of the config file.
#[derive(Serialize, Deserialize)]
struct ConfigDoc {
    k: i64,
    t: i64,
    release_factor: f64,
    #[serde(default)]
    release_list: Vec<Vec<i64>>,
    #[serde(default = "default_input_mode")]
    input_mode: InputMode,
    #[serde(default = "default_log_base")]
    log_base: LogBase,
    #[serde(default = "default_ce_reduction")]
    ce_reduction: CeReduction,
}

fn default_input_mode() -> InputMode {
    InputMode::Probs
}

fn default_log_base() -> LogBase {
    LogBase::E
}

fn default_ce_reduction() -> CeReduction {
    CeReduction::Mean
}

impl TryFrom<ConfigDoc> for MpcsConfig {
    type Error = Error;

    fn try_from(doc: ConfigDoc) -> Result<Self> {
        let as_label = |v: i64| -> Result<usize> {
            usize::try_from(v).map_err(|_| Error::Config(format!("negative label {v}")))
        };
        if doc.k < 1 {
            return Err(Error::Config(format!("k must be at least 1, got {}", doc.k)));
        }
        if doc.t < 2 {
            return Err(Error::Config(format!("t must be at least 2, got {}", doc.t)));
        }
        let t = u32::try_from(doc.t)
            .map_err(|_| Error::Config(format!("t = {} is too large", doc.t)))?;
        let mut rules = Vec::new();
        for (i, entry) in doc.release_list.iter().enumerate() {
            if entry.len() < 2 {
                return Err(Error::Config(format!(
                    "release_list entry {i} needs a true label and at least one released label"
                )));
            }
            let true_label = as_label(entry[0])?;
            let released = entry[1..]
                .iter()
                .map(|&v| as_label(v))
                .collect::<Result<Vec<_>>>()?;
            rules.push(ReleaseRule::new(true_label, released)?);
        }
        let mut cfg = MpcsConfig::new(doc.k as usize, t, doc.release_factor, rules)?;
        cfg.input_mode = doc.input_mode;
        cfg.log_base = doc.log_base;
        cfg.ce_reduction = doc.ce_reduction;
        Ok(cfg)
    }
}

impl From<&MpcsConfig> for ConfigDoc {
    fn from(cfg: &MpcsConfig) -> Self {
        ConfigDoc {
            k: cfg.k as i64,
            t: cfg.t as i64,
            release_factor: cfg.release_factor,
            release_list: cfg
                .rules
                .iter()
                .map(|r| {
                    std::iter::once(r.true_label as i64)
                        .chain(r.released.iter().map(|&l| l as i64))
                        .collect()
                })
                .collect(),
            input_mode: cfg.input_mode,
            log_base: cfg.log_base,
            ce_reduction: cfg.ce_reduction,
        }
    }
}
