use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inadmissible material: smallest eigenvalue {min_eig:e} is not positive")]
    Inadmissible { min_eig: f64 },

    #[error("invalid microstructure: {0}")]
    InvalidMicrostructure(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
