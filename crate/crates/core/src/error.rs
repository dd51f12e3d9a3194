use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite {
        what: &'static str,
        min_eigenvalue: f64,
    },

    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),

    #[error("lattice truncation needs radius {required:.1} > cap {cap}")]
    TruncationCap { required: f64, cap: u32 },

    #[error("reference enumeration of {points:e} lattice points exceeds cap")]
    EnumerationCap { points: f64 },

    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: String },

    #[error("not a permutation of 0..{0}")]
    InvalidPermutation(usize),

    #[error("insufficient conditioned sample: {found} rows in window, need {required}")]
    InsufficientSample { found: usize, required: usize },

    #[error("empty bin range for dimension {0}")]
    EmptyRange(usize),

    #[error("quadrature grid too small: edge mass {edge_fraction:e} of integral")]
    GridTooSmall { edge_fraction: f64 },

    #[error(
        "all {restarts} restarts ended with invalid parameters (best penalised objective {best:e})"
    )]
    AllRestartsInvalid { restarts: usize, best: f64 },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
