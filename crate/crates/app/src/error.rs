use thiserror::Error;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] sticker_core::Error),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification the HTTP layer maps onto status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Precondition,
    Invalid,
    Conflict,
    Internal,
}

impl AppError {
    pub fn kind(&self) -> ErrorKind {
        use sticker_core::Error as E;
        match self {
            AppError::NotFound(_) | AppError::Core(E::NotFound(_)) => ErrorKind::NotFound,
            AppError::Precondition(_) => ErrorKind::Precondition,
            AppError::Invalid(_)
            | AppError::Json(_)
            | AppError::Core(E::Schema(_) | E::Config(_) | E::Domain(_) | E::Taxonomy(_) | E::Json(_)) => {
                ErrorKind::Invalid
            }
            AppError::Core(E::Version { .. }) => ErrorKind::Conflict,
            _ => ErrorKind::Internal,
        }
    }
}
