use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an input value failed; `field` names the offending input.
    #[error("invalid {field}: {reason}")]
    InvalidInput { field: &'static str, reason: String },
    /// A numerical procedure could not reach its stated accuracy.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A configured resource cap (slice size, shell cap, iteration cap) was exceeded.
    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidInput { field, reason: reason.into() }
}
