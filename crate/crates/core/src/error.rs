use std::io;

use thiserror::Error;

/// Errors produced anywhere in the processing and retrieval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("unknown id: {0}")]
    UnknownId(String),

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("training fault: {0}")]
    Training(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable kind, used by the CLI and HTTP layers.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invariant(_) => "invariant",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Shape(_) => "shape",
            Error::Format(_) => "format",
            Error::Version { .. } => "version",
            Error::DuplicateId(_) => "duplicate_id",
            Error::UnknownId(_) => "unknown_id",
            Error::ZeroNorm => "zero_norm",
            Error::Dimension { .. } => "dimension",
            Error::Training(_) => "training",
            Error::Stage { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
