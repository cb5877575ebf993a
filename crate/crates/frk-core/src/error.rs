//! Crate-wide error type.

use alloc::string::String;
use alloc::vec::Vec;

use crate::estimation::FitTraceRow;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, FrkError>;

/// Errors produced by grid construction, estimation, and prediction.
#[derive(Debug, thiserror::Error)]
pub enum FrkError {
    #[error("grid is empty")]
    EmptyGrid,

    #[error("non-finite coordinate or value at row {0}")]
    NonFinite(usize),

    #[error("duplicate location at rows {0} and {1}")]
    DuplicateLocation(usize, usize),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("bin {0} is empty; empty bins make the binned variance undefined and must be removed before estimation")]
    EmptyBin(usize),

    #[error("{bins} bins for {basis} basis functions; estimation requires more bins than basis functions")]
    TooFewBins { bins: usize, basis: usize },

    #[error("bin {0} has zero residual variance; use unweighted estimation or merge bins")]
    ZeroBinVariance(usize),

    #[error(
        "noise residual is identically zero (happens when the bin count equals the basis count), so sigma2 is unidentifiable"
    )]
    DegenerateNoiseResidual,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("eigenvalue iteration failed to converge")]
    EigenFailure,

    #[error(
        "no positive definite fit within {iterations} iterations (last sigma2 {last_sigma2}, min eigenvalue {last_min_eig})"
    )]
    MaxIterationsExceeded {
        iterations: usize,
        last_sigma2: f64,
        last_min_eig: f64,
        trace: Vec<FitTraceRow>,
    },

    #[error(
        "constrained fit stalled at sigma2 {sigma2} with min eigenvalue {min_eig}; the binned covariance does not admit a positive definite fit"
    )]
    FitStalled {
        sigma2: f64,
        min_eig: f64,
        trace: Vec<FitTraceRow>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}
