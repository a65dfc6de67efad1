use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("unsupported dimension {dim}: {reason}")]
    UnsupportedDimension { dim: usize, reason: &'static str },

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("unsupported algorithm: {0}")]
    UnsupportedAlgorithm(String),

    #[error("configuration length {got} does not match geometry edge count {expected}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("too many edges for exact enumeration: {edges} > cap {cap}")]
    TooManyEdges { edges: usize, cap: usize },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate samples: {0}")]
    Degenerate(String),

    #[error("no decay: {0}")]
    NoDecay(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("missing calibration: {0}")]
    MissingCalibration(&'static str),

    #[error("inconsistent prediction: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
