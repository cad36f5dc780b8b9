use thiserror::Error;

/// Errors raised by mesh construction, discretization and solution.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("non-matching mesh: {0}")]
    NonMatching(String),

    #[error("unsupported spatial dimension {0} (only d = 2 is implemented)")]
    UnsupportedDimension(usize),

    #[error("unsupported degree {requested} (maximum is {max})")]
    UnsupportedDegree { requested: usize, max: usize },

    #[error("method inapplicable: {0}")]
    MethodInapplicable(String),

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
