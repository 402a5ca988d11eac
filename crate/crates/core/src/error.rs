use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Malformed or out-of-contract input.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Two structures that must share a signature do not.
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),

    /// An enumeration would exceed its configured budget.
    #[error("cap exceeded: {what} needs {need}, limit {limit}")]
    CapExceeded {
        what: &'static str,
        need: u64,
        limit: u64,
    },

    /// A checked mathematical invariant failed to hold.
    #[error("property violation: {0}")]
    Violation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}

pub(crate) fn violation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Violation(msg.into()))
}
