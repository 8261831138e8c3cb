use std::path::PathBuf;

use egomem_core::ingest::IngestError;
use egomem_core::retrieval::RetrievalError;
use egomem_core::store::StoreError;
use egomem_core::synthetic::SyntheticError;
use egomem_core::ProviderError;
use thiserror::Error;

/// Errors shared by the command line and the HTTP service. Each variant has
/// one exit code and one HTTP status.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    BadInput(String),
    #[error("{0}")]
    NotFound(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("provider error: {0}")]
    Provider(#[from] ProviderError),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Provider(_) => 3,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        AppError::Io { path: path.into(), message: err.to_string() }
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                AppError::NotFound(format!("store file {} does not exist", path.display()))
            }
            StoreError::Io { path, source } => AppError::io(path, source),
            StoreError::Malformed(_) | StoreError::UnsupportedVersion(_) => AppError::BadInput(e.to_string()),
            StoreError::Invariant(_) | StoreError::Embedding(_) | StoreError::Profile(_) => AppError::Invariant(e.to_string()),
            StoreError::Provider(p) => AppError::Provider(p),
        }
    }
}

impl From<IngestError> for AppError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Parse { .. } | IngestError::InvalidRecord { .. } | IngestError::UserMismatch { .. } | IngestError::Config(_) => {
                AppError::BadInput(e.to_string())
            }
            IngestError::DuplicateEventId(_) | IngestError::DimensionMismatch { .. } | IngestError::Graph(_) => {
                AppError::Invariant(e.to_string())
            }
            IngestError::Store(s) => s.into(),
            IngestError::Provider(p) => AppError::Provider(p),
        }
    }
}

impl From<RetrievalError> for AppError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::UserMismatch { .. } => AppError::NotFound(e.to_string()),
            RetrievalError::EmptyQuery => AppError::BadInput(e.to_string()),
            RetrievalError::NotIndexed | RetrievalError::Index(_) => AppError::Invariant(e.to_string()),
            RetrievalError::Store(s) => s.into(),
            RetrievalError::Provider(p) => AppError::Provider(p),
        }
    }
}

impl From<SyntheticError> for AppError {
    fn from(e: SyntheticError) -> Self {
        match e {
            SyntheticError::Retrieval(r) => r.into(),
            other => AppError::BadInput(other.to_string()),
        }
    }
}
