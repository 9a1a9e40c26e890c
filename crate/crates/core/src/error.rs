use thiserror::Error;

/// Errors produced by instance generation, detection and analysis.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimensions: K={users}, M={antennas} (both must be at least 1)")]
    InvalidDimensions { users: usize, antennas: usize },

    #[error("{what} must be strictly positive and finite, got {value}")]
    NonPositiveVariance { what: &'static str, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("load factor K/M = {beta} must be below 1 for asymptotic analysis")]
    LoadTooHigh { beta: f64 },

    #[error("asymptotic analysis requires identical source variances")]
    NonUniformSourceVariance,

    #[error("zero sum-node variance on edge (m={antenna}, k={user}); instance is degenerate")]
    DegenerateVariance { antenna: usize, user: usize },

    #[error("zero diagonal entry at index {0}; iteration matrix is degenerate")]
    ZeroDiagonal(usize),

    #[error("relaxation parameter w={w} outside admissible range (0, {upper})")]
    InvalidRelaxation { w: f64, upper: f64 },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("message state has not converged: {0}")]
    NotConverged(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
