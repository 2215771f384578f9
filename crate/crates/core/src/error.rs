use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("boost velocity |beta| = {0} must be strictly below 1")]
    InvalidBoost(f64),
    #[error("event coordinates must be finite")]
    NonFiniteEvent,
    #[error("invalid timing scenario: {0}")]
    InvalidTiming(String),
    #[error("influence speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid state vector: {0}")]
    InvalidState(String),
    #[error("invalid behavior: {0}")]
    InvalidBehavior(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid party subset: {0}")]
    InvalidSubset(String),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no point D exists for the given events")]
    NoPointD,
    #[error("linear program failed: {0}")]
    Lp(String),
}
