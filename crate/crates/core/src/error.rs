use thiserror::Error;

/// Errors raised by the tensor-network library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RgtnError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mode {mode} out of range for order {order}")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no such node {0}")]
    NoSuchNode(usize),
    #[error("no such edge {0}")]
    NoSuchEdge(usize),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("graph invariant violated: {0}")]
    Invariant(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for RgtnError {
    fn from(e: std::io::Error) -> Self {
        RgtnError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, RgtnError>;
