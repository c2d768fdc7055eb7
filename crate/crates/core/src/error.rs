use thiserror::Error;

/// Errors raised by model fitting, inference and evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),
    /// A value lies outside the mathematical domain of a density.
    #[error("domain error: {0}")]
    Domain(String),
    /// Input data is malformed (NaN, inconsistent shapes, bad labels).
    #[error("data error: {0}")]
    Data(String),
    /// Optimization produced a non-finite quantity.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A metric is undefined for the given input (e.g. a single class).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub(crate) fn data(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}
