use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mode {mode} out of range for order-{order} tensor")]
    InvalidMode { mode: usize, order: usize },

    #[error("mode {0} appears more than once in a multi-mode product")]
    RepeatedMode(usize),

    #[error("invalid ranks: {0}")]
    InvalidRanks(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("layer is not in matrix configuration: {0}")]
    NotMatrixLayer(String),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("unknown model spec `{0}`")]
    UnknownModel(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
