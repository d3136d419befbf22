use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are grouped by failure class so that front ends can map them to
/// distinct exit codes (see [`Error::class`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("endpoint out of range: edge ({src}, {dst}) with {num_nodes} nodes")]
    EndpointOutOfRange {
        src: usize,
        dst: usize,
        num_nodes: usize,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("empty mask passed to {0}")]
    EmptyMask(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse failure class of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Data(_)
            | Error::EndpointOutOfRange { .. }
            | Error::UndefinedMetric(_)
            | Error::EmptyMask(_)
            | Error::Csv(_) => ErrorClass::Data,
            Error::Shape { .. } | Error::NonFinite(_) => ErrorClass::Numeric,
            Error::Io(_) | Error::Json(_) => ErrorClass::Io,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
