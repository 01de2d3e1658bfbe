use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the dialog-policy library.
#[derive(Debug, Error)]
pub enum PedpError {
    #[error("malformed action {text:?}: {reason}")]
    ParseAction { text: String, reason: &'static str },

    #[error("unknown actions: {0:?}")]
    UnknownActions(Vec<String>),

    #[error("action index {index} out of range for vocabulary of size {size}")]
    ActionIndex { index: usize, size: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty macro-action has no decomposition")]
    EmptyMacro,

    #[error("{path}:{line}: {message}")]
    Corpus {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("vocabulary digest mismatch: expected {expected}, found {found}")]
    VocabDigest { expected: String, found: String },

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("simulator: {0}")]
    Simulator(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PedpError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PedpError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: usize, got: usize) -> Self {
        PedpError::Shape {
            what: what.into(),
            expected,
            got,
        }
    }
}

pub type Result<T, E = PedpError> = std::result::Result<T, E>;
