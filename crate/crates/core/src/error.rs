use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The covariance could not be factorized even after the pivoted and
    /// eigenvalue fallbacks.
    #[error("covariance factorization failed (minimum eigenvalue {min_eigenvalue:e})")]
    Factorization { min_eigenvalue: f64 },

    /// The experiment's hypothesis does not hold for the configured model.
    #[error("refused: {0}")]
    Refused(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
