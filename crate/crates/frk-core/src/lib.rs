//! Fixed Rank Kriging (FRK) core library.
//!
//! FRK models a spatial field through a fixed number `r` of basis functions,
//! giving the observation covariance the low-rank-plus-diagonal form
//! `Z K Z' + sigma2 V`. Everything expensive then reduces to `r x r` linear
//! algebra: the covariance inverse goes through the Sherman-Morrison-Woodbury
//! identity, and the covariance parameters `(sigma2, K)` are fitted to binned
//! method-of-moments summaries by Frobenius-norm least squares.
//!
//! The plain least-squares estimate of `K` is not guaranteed to be positive
//! definite. [`fit_cov_params`] runs an iterative scheme that treats positive
//! definiteness as an upper-bound constraint on `sigma2`: whenever the
//! current `K` estimate has a negative eigenvalue, the minimum-eigenvector
//! quadratic-form ratio yields a bound below which `K` is positive definite,
//! and the least-squares problem is re-solved under that bound. Each round
//! strictly decreases `sigma2` and strictly increases the minimum eigenvalue
//! of `K`, so the fit carries a per-iteration trace as its certificate.
//!
//! The crate is `no_std`-compatible (with `alloc`); everything that touches
//! the filesystem, clocks, or random number generation lives in the
//! companion `frk-cli` crate.
//!
//! Pipeline overview:
//!
//! 1. [`detrend_ols`] removes the trend with ordinary least squares.
//! 2. [`BasisSet::build`] lays out multiresolution bisquare bases and
//!    evaluates them into a sparse matrix.
//! 3. [`make_bins`] and [`binned_moments`] aggregate residuals into
//!    method-of-moments summaries.
//! 4. [`fit_cov_params`] estimates `(sigma2, K)` with the positive
//!    definiteness guarantee.
//! 5. [`FittedModel::fit`] wires the above together, solves the generalized
//!    least squares trend, and predicts with pointwise mean squared
//!    prediction errors at cost independent of the data size.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod basis;
pub mod binning;
pub(crate) mod eigen;
pub mod error;
pub mod estimation;
pub mod grid;
pub mod predict;
pub mod sparse;

pub use basis::{build_multires_centroids, evaluate_bisquare, BasisSet, Resolution};
pub use binning::{
    binned_moments, detrend_ols, make_bins, robustness_weights, BinScheme, BinSummary,
    TrendDesign,
};
pub use error::{FrkError, Result};
pub use estimation::{
    basis_cov_at, fit_cov_params, min_eigenpair, pd_sigma2_bound, sigma2_ls, sigma2_scan,
    CovParams, FitOptions, FitTraceRow, QrFactors, ScanPoint,
};
pub use grid::{BoundingBox, Grid, Location};
pub use predict::{gls_beta, FittedModel, Predictions};
pub use sparse::RowSparseMatrix;
