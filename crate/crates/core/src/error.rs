use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("graph construction: {0}")]
    Construction(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("batch composition: {0}")]
    BatchComposition(String),

    #[error("sampling: {0}")]
    Sampling(String),

    #[error("ingestion of {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("empty index: {0}")]
    EmptyIndex(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("pyramid spec: {0}")]
    Spec(String),

    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Construction(_) => "construction",
            Error::DegenerateInput(_) => "degenerate-input",
            Error::BatchComposition(_) => "batch-composition",
            Error::Sampling(_) => "sampling",
            Error::Ingestion { .. } => "ingestion",
            Error::EmptyIndex(_) => "empty-index",
            Error::Protocol(_) => "protocol",
            Error::Checkpoint(_) => "checkpoint",
            Error::Spec(_) => "spec",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
