use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate node_id `{0}`")]
    DuplicateNode(String),

    #[error("edge record {line} ({src} -> {dst}): {reason}")]
    BadEdge {
        line: usize,
        src: String,
        dst: String,
        reason: String,
    },

    #[error("invalid split: {0}")]
    Split(String),

    #[error("unknown commit `{0}`")]
    UnknownCommit(String),

    #[error("unknown project `{0}`")]
    UnknownProject(String),

    #[error("no embedding for node `{0}`")]
    MissingEmbedding(String),

    #[error("duplicate embedding for node `{0}`")]
    DuplicateEmbedding(String),

    #[error("dimension mismatch: expected {expected}, got {actual}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    DimMismatch {
        expected: usize,
        actual: usize,
        context: Option<String>,
    },

    #[error("classifier: {0}")]
    Classifier(String),

    #[error("class {class} has {count} samples, fewer than {folds} folds")]
    Stratification {
        class: usize,
        count: usize,
        folds: usize,
    },

    #[error("count matrix is entirely zero")]
    EmptyCountMatrix,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no trainable pairs in training set")]
    NoPairs,

    #[error("test commit `{0}` leaked into training pairs")]
    Leakage(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    /// Short stable identifier, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Malformed { .. } => "malformed",
            Error::DuplicateNode(_) => "duplicate_node",
            Error::BadEdge { .. } => "bad_edge",
            Error::Split(_) => "split",
            Error::UnknownCommit(_) => "unknown_commit",
            Error::UnknownProject(_) => "unknown_project",
            Error::MissingEmbedding(_) => "missing_embedding",
            Error::DuplicateEmbedding(_) => "duplicate_embedding",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::Classifier(_) => "classifier",
            Error::Stratification { .. } => "stratification",
            Error::EmptyCountMatrix => "empty_count_matrix",
            Error::Config(_) => "config",
            Error::NonFinite(_) => "non_finite",
            Error::NoPairs => "no_pairs",
            Error::Leakage(_) => "leakage",
            Error::Checkpoint(_) => "checkpoint",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, actual: usize, context: impl Into<String>) -> Self {
        Error::DimMismatch {
            expected,
            actual,
            context: Some(context.into()),
        }
    }
}
