use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error category, used by front-ends to map errors onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Filesystem-level failure (unreadable or unwritable path).
    Io,
    /// Malformed or out-of-contract input: files, configs, labels, arguments.
    Validation,
    /// Numeric failure at runtime (divergence, non-finite loss).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("sample {id}: {source}")]
    Sample {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("probability vector has {got} entries, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("probabilities sum to {sum}, outside [{lo}, {hi}]")]
    ProbabilitySum { sum: f64, lo: f64, hi: f64 },

    #[error("probability {value} outside [0, 1]")]
    ProbabilityRange { value: f64 },

    #[error("non-finite value in input")]
    NonFinite,

    #[error("label {label} out of range for {class_count} classes")]
    LabelRange { label: usize, class_count: usize },

    #[error("class count must be at least 2, got {0}")]
    ClassCount(usize),

    #[error("k = {k} exceeds class count {class_count}")]
    KExceedsClasses { k: usize, class_count: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("series lengths differ: {a} vs {b}")]
    SeriesLength { a: usize, b: usize },

    #[error("checkpoint has no prediction dump")]
    MissingDump,

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("reference score must be positive, got {0}")]
    NonPositiveReference(f64),

    #[error("invalid training config: {0}")]
    TrainConfig(String),

    #[error("invalid dataset spec: {0}")]
    DatasetSpec(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Divergence { .. } | Error::NonPositiveReference(_) => ErrorKind::Numeric,
            Error::Sample { source, .. } => source.kind(),
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn for_sample(id: usize, source: Error) -> Self {
        Error::Sample {
            id,
            source: Box::new(source),
        }
    }
}
