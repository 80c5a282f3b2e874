//! Error type shared across the crate.

use std::path::PathBuf;

use crate::models::ScoringModel;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or violated precondition.
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem failure, carries the offending path.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input data, carries the 1-based line number.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Input yielded no usable data.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// User or item id outside the model's tables.
    #[error("id out of range: {0}")]
    IndexOutOfRange(String),

    /// Operation requires a fitted model.
    #[error("model not fitted: {0}")]
    NotFitted(String),

    /// Loss invoked with no instances to score.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Score lookup failed for an item referenced by a pair.
    #[error("missing score for item {0}")]
    MissingScore(usize),

    /// Evaluation could not produce a defined value.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training loss became non-finite. Carries the best checkpoint reached
    /// before divergence, if any epoch completed with finite loss.
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        best: Option<Box<ScoringModel>>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
