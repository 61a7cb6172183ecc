use thiserror::Error;

/// Errors raised by the estimators and their supporting numerics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series too short: need more than {needed} samples, have {have}")]
    SeriesTooShort { needed: usize, have: usize },

    #[error("insufficient neighbour candidates for query {query}: need {needed}, only {available} admissible")]
    InsufficientCandidates {
        query: usize,
        needed: usize,
        available: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("singular mass matrix at state {0:?}")]
    SingularMassMatrix(Vec<f64>),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("negative value {value} at index {index} cannot be log-transformed")]
    NegativeInput { index: usize, value: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed input: {0}")]
    Malformed(String),
}

impl Error {
    /// True for errors caused by the content of a data set rather than by the
    /// configuration that was asked of it.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::SeriesTooShort { .. }
                | Error::InsufficientCandidates { .. }
                | Error::InsufficientData(_)
                | Error::Divergence { .. }
                | Error::SingularMassMatrix(_)
                | Error::NegativeInput { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Malformed(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
