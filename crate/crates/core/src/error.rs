use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("probe set mismatch: {0:016x} vs {1:016x}")]
    ProbeMismatch(u64, u64),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for failures caused by numerics (blow-ups, NaN losses) rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
