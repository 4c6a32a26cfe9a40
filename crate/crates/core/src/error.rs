use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training, data and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("{}: load error at byte offset {offset}: {reason}", file.display())]
    Load {
        file: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("undefined AUC: {0}")]
    UndefinedAuc(String),

    #[error("{stage}, epoch {epoch}, batch {batch}: {source}")]
    Training {
        stage: &'static str,
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Strips any training-position wrapper and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Training { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
