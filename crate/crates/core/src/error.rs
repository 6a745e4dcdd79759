use thiserror::Error;

/// Errors shared across the crate. Numerical routines reject malformed input
/// rather than panicking so batch drivers can record the failure and move on.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("covariance Gram matrix is not positive semi-definite beyond jitter 1e-10 (pivot {pivot:.3e} at index {index})")]
    NotPsd { index: usize, pivot: f64 },

    #[error("{what} of size {got} exceeds the guard limit {limit}")]
    TooLarge {
        what: &'static str,
        limit: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at t = {at}")]
    NonFinite { what: &'static str, at: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
