use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped by who is at fault: bad arguments (`Input`,
/// `Shape`), bad configuration, bad files (`Parse`, `Io`, `Corrupt`,
/// `Version`), and numerical failure during training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("node id out of range in pair ({0}, {1}) for graph of {2} nodes")]
    NodeOutOfRange(usize, usize, usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("incompatible model file version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("training diverged at epoch {epoch} (last finite epoch: {last_good:?}): {reason}")]
    Diverged {
        epoch: usize,
        last_good: Option<usize>,
        reason: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
