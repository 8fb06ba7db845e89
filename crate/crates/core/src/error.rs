use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record in {path} (line {line}): {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("dangling sticker references in conversations: {}", .conversation_ids.join(", "))]
    Integrity { conversation_ids: Vec<String> },
    #[error("label `{0}` is not in the intention taxonomy")]
    Taxonomy(String),
    #[error("unreadable image asset {path}: {message}")]
    Asset { path: String, message: String },
    #[error("{backend} backend failed on {operation}: {message}")]
    Backend { backend: String, operation: String, message: String },
    #[error("expected {expected} inputs, got {actual}")]
    Arity { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of range for {len} classes")]
    Index { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (conversations: {})", .conversation_ids.join(", "))]
    NonFinite { epoch: usize, batch: usize, conversation_ids: Vec<String> },
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn load(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Load { path: path.into(), source }
    }

    pub(crate) fn backend(backend: &str, operation: impl Into<String>, message: impl ToString) -> Self {
        Error::Backend {
            backend: backend.to_string(),
            operation: operation.into(),
            message: message.to_string(),
        }
    }
}
