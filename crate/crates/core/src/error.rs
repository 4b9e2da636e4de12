use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("system is not identifiable under the privacy budget")]
    NotIdentifiable,

    #[error("unsupported noise family: {0}")]
    UnsupportedFamily(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("calibration infeasible: {0}")]
    CalibrationInfeasible(String),

    #[error("communication graph is not connected")]
    Disconnected,

    #[error("empty matrix family")]
    EmptyFamily,

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
