use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite iterate at inner step {step}")]
    NonFiniteIterate { step: usize },

    #[error("non-finite value function at outer step {step}")]
    NonFiniteObjective { step: usize },

    #[error("operator `{0}` does not provide cotangent products")]
    MissingCotangent(String),

    #[error("composed operators must share the same metric")]
    MetricMismatch,

    #[error("config: {0}")]
    Config(String),

    #[error("malformed metrics file: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
