use std::path::PathBuf;

use thiserror::Error;

use crate::forest::ForestViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operation requires {expected} supervision, dataset is {found}")]
    UnsupportedSupervision {
        expected: &'static str,
        found: &'static str,
    },

    #[error("undefined ratio: {0}")]
    Undefined(String),

    #[error("unknown superpixel {superpixel} (image has {count})")]
    UnknownSuperpixel { superpixel: usize, count: usize },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty sample set: {0}")]
    EmptySamples(String),

    #[error("image {image}: invalid region forest: {}", format_violations(.violations))]
    InvalidForest {
        image: usize,
        violations: Vec<ForestViolation>,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{path}:{line}: parse error in {record}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        record: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag, used for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::UnsupportedSupervision { .. } => "unsupported_supervision",
            Error::Undefined(_) => "undefined",
            Error::UnknownSuperpixel { .. } => "unknown_superpixel",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::EmptySamples(_) => "empty_samples",
            Error::InvalidForest { .. } => "invalid_forest",
            Error::Validation(_) => "validation",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_violations(violations: &[ForestViolation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
