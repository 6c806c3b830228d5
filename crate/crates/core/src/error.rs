use thiserror::Error;

#[derive(Debug, Error)]
pub enum MprError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("binary-mode input has a non-binary entry {value} at index {index}")]
    NonBinaryInput { index: usize, value: f64 },

    #[error("no valid exposure gain: every raw intensity on the probe set is zero")]
    NoExposure,

    #[error("reference anchor {index} became all-ones before the chain completed")]
    AnchorSaturated { index: usize },

    #[error("reference design failed after {attempts} attempts: {last}")]
    DesignExhausted { attempts: usize, last: Box<MprError> },

    #[error("underdetermined: {0}")]
    Underdetermined(String),

    #[error("row {row} frame {frame} is unlocalizable")]
    Unlocalizable { row: usize, frame: usize },

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MprError>;
