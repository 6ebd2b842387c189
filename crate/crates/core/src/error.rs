use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed annotation JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },

    #[error("entity {id}: unknown label {label:?}")]
    UnknownLabel { id: i64, label: String },

    #[error("link ({from}, {to}) references missing entity {missing}")]
    DanglingLink { from: i64, to: i64, missing: i64 },

    #[error("invalid document: {0}")]
    Validation(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("no embedding for doc {doc_id:?} entity {entity_id}")]
    MissingEmbedding { doc_id: String, entity_id: i64 },

    #[error("embedding dimension {found} does not match expected {expected}")]
    EmbeddingDim { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image: {0}")]
    Image(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
