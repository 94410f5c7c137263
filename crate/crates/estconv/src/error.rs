//! Crate-wide error type.

/// Everything that can go wrong across meshing, solving, and the driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input data (mesh files, polygon descriptions).
    #[error("input error at line {line}: {msg}")]
    Input { line: usize, msg: String },

    /// An operation was called with arguments that violate its contract.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An iterative solver failed to reach its tolerance.
    #[error("solver failed: {what} (final residual {residual:.3e})")]
    Solver { what: String, residual: f64 },

    /// A numeric consistency check failed.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Bad run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn input(line: usize, msg: impl Into<String>) -> Self {
        Error::Input { line, msg: msg.into() }
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
