use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("segment resolution must be at least {min}, got {got}")]
    InvalidResolution { got: usize, min: usize },

    #[error("segment of resolution N needs N+1 = {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value {value} at grid index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("resolution mismatch: {left} vs {right}")]
    ResolutionMismatch { left: usize, right: usize },

    #[error("zero state: the segment has vanishing M2 norm")]
    ZeroState,

    #[error("extinct state at unit interval {t}: advanced segment is numerically zero")]
    ExtinctState { t: u64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("overflow despite renormalization at unit interval {t}")]
    Overflow { t: u64 },

    #[error("initial-condition spec `{spec}`: {reason}")]
    InvalidInitialCondition { spec: String, reason: String },

    #[error("i/o: {0}")]
    Io(String),
}

impl SimError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        SimError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
