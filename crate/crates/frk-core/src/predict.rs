//! Low-rank prediction with mean squared prediction errors.
//!
//! With the covariance in the form `Sigma = Z K Z' + sigma2 V`, the
//! Sherman-Morrison-Woodbury identity reduces every application of
//! `Sigma^-1` to a diagonal solve plus an `r x r` solve:
//!
//! `Sigma^-1 v = D^-1 v - D^-1 Z (K^-1 + Z' D^-1 Z)^-1 Z' D^-1 v`
//!
//! where `D = sigma2 V` is diagonal. The `r x r` core is factorized once
//! per model; after that, the generalized least squares trend, the
//! prediction weights, and all per-point mean squared prediction errors
//! cost `O(n r)` to set up and `O(nnz^2 + p^2)` per prediction point,
//! independent of the number of observations.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::basis::BasisSet;
use crate::binning::{binned_moments, detrend_ols, make_bins, TrendDesign};
use crate::error::{FrkError, Result};
use crate::estimation::{fit_cov_params, min_eigenpair, CovParams, FitOptions};
use crate::grid::{Grid, Location};
use crate::sparse::RowSparseMatrix;

/// Condition-number limit for the fitted basis covariance; beyond this the
/// low-rank inverse is numerically meaningless and the model refuses to
/// build rather than silently regularize.
const COND_LIMIT: f64 = 1e12;

/// Mean squared prediction errors this far below zero are treated as
/// roundoff and clamped; anything lower is a hard numerical error.
const MSPE_ROUNDOFF: f64 = -1e-10;

/// Point predictions of the hidden process and their mean squared
/// prediction errors.
#[derive(Debug, Clone)]
pub struct Predictions {
    /// Predicted hidden-process values.
    pub hhat: Vec<f64>,
    /// Mean squared prediction error per point.
    pub mspe: Vec<f64>,
}

impl Predictions {
    /// Standard errors (square roots of the mean squared prediction
    /// errors).
    pub fn standard_errors(&self) -> Vec<f64> {
        self.mspe.iter().map(|&m| m.sqrt()).collect()
    }
}

/// Generalized least squares trend coefficients.
///
/// `apply` must compute `Sigma^-1 v`. Returns the coefficient vector and
/// `(X' Sigma^-1 X)^-1`, which prediction reuses for the trend-uncertainty
/// term. Rank deficiency of the weighted normal matrix is an error.
pub fn gls_beta(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    mut apply: impl FnMut(&DVector<f64>) -> DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    let n = x.nrows();
    if y.len() != n {
        return Err(FrkError::DimensionMismatch {
            what: "response vector",
            expected: n,
            got: y.len(),
        });
    }
    let mut sigma_inv_x = DMatrix::zeros(n, p);
    for j in 0..p {
        let col = apply(&x.column(j).into_owned());
        sigma_inv_x.set_column(j, &col);
    }
    let xtsx = x.transpose() * &sigma_inv_x;
    let chol = match Cholesky::new(0.5 * (&xtsx + xtsx.transpose())) {
        Some(c) => c,
        None => {
            return Err(FrkError::RankDeficient {
                rank: 0,
                cols: p,
            })
        }
    };
    let sigma_inv_y = apply(y);
    let xty = x.transpose() * &sigma_inv_y;
    let beta = chol.solve(&xty);
    let xtsx_inv = chol.inverse();

    let residual = (&xtsx * &beta - &xty).norm();
    let scale = xty.norm().max(f64::MIN_POSITIVE);
    if residual > 1e-8 * scale {
        log::warn!(
            "GLS normal equations solved to relative residual {:.3e}",
            residual / scale
        );
    }
    Ok((beta, xtsx_inv))
}

/// The Sherman-Morrison-Woodbury application of `Sigma^-1` over the
/// observed rows. `core` is absent when the basis covariance is
/// identically zero (`Sigma` is then purely diagonal).
struct SigmaInvOp {
    inv_noise: DVector<f64>,
    core_chol: Option<Cholesky<f64, Dyn>>,
}

impl SigmaInvOp {
    fn apply(&self, z_obs: &RowSparseMatrix, v: &DVector<f64>) -> DVector<f64> {
        let diag = v.component_mul(&self.inv_noise);
        match &self.core_chol {
            None => diag,
            Some(core) => {
                let rhs = z_obs.tr_mul_vec(&diag);
                let solved = core.solve(&rhs);
                let back = z_obs.mul_vec(&solved);
                &diag - back.component_mul(&self.inv_noise)
            }
        }
    }
}

/// A fully fitted FRK model: trend, certified covariance parameters, basis,
/// and the factorizations reused across all predictions.
pub struct FittedModel {
    grid: Grid,
    design: TrendDesign,
    basis: BasisSet,
    params: CovParams,
    v_diag: Option<Vec<f64>>,
    beta: DVector<f64>,
    z_obs: RowSparseMatrix,
    sigma_inv: SigmaInvOp,
    /// `K Z' Sigma^-1 (Y - X beta)`.
    prediction_weights: DVector<f64>,
    /// `K Z' Sigma^-1 Z K`.
    shrinkage: DMatrix<f64>,
    /// `X' Sigma^-1 Z K`.
    trend_cross: DMatrix<f64>,
    /// `(X' Sigma^-1 X)^-1`.
    trend_cov: DMatrix<f64>,
}

impl FittedModel {
    /// Run the whole pipeline: OLS detrend, basis construction, binning,
    /// the positive-definite covariance fit, and cache assembly.
    pub fn fit(
        grid: Grid,
        design: TrendDesign,
        basis_counts: &[usize],
        bins: usize,
        v_diag: Option<Vec<f64>>,
        options: &FitOptions,
    ) -> Result<Self> {
        let (_beta_ols, residuals) = detrend_ols(&grid, &design)?;
        let basis = BasisSet::build(&grid, basis_counts)?;
        let scheme = make_bins(&grid, bins)?;
        let summary = binned_moments(&residuals, &scheme, &basis, v_diag.as_deref())?;
        let params = fit_cov_params(&summary, options)?;
        Self::from_parts(grid, design, basis, params, v_diag)
    }

    /// Assemble a model from an already-fitted covariance. The basis must
    /// have been evaluated on the same grid.
    pub fn from_parts(
        grid: Grid,
        design: TrendDesign,
        basis: BasisSet,
        params: CovParams,
        v_diag: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = grid.len();
        if basis.evaluation().nrows() != n {
            return Err(FrkError::DimensionMismatch {
                what: "basis evaluation rows",
                expected: n,
                got: basis.evaluation().nrows(),
            });
        }
        if let Some(v) = &v_diag {
            if v.len() != n {
                return Err(FrkError::DimensionMismatch {
                    what: "measurement variance diagonal",
                    expected: n,
                    got: v.len(),
                });
            }
            if let Some(i) = v.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(FrkError::InvalidArgument(alloc::format!(
                    "measurement variance at row {i} must be positive and finite"
                )));
            }
        }
        let r = basis.r();
        if params.basis_cov.nrows() != r || params.basis_cov.ncols() != r {
            return Err(FrkError::DimensionMismatch {
                what: "basis covariance",
                expected: r,
                got: params.basis_cov.nrows(),
            });
        }
        if !(params.sigma2.is_finite() && params.sigma2 > 0.0) {
            return Err(FrkError::NotPositiveDefinite(
                "sigma2 must be positive for the diagonal part of the covariance to be invertible",
            ));
        }

        let obs = grid.observed_indices();
        if obs.is_empty() {
            return Err(FrkError::EmptyGrid);
        }
        let z_obs = basis.evaluation().select_rows(&obs);
        let inv_noise = DVector::from_fn(obs.len(), |i, _| {
            let v = v_diag.as_ref().map_or(1.0, |v| v[obs[i]]);
            1.0 / (params.sigma2 * v)
        });

        let k = &params.basis_cov;
        let zero_k = k.iter().all(|&x| x == 0.0);
        let sigma_inv = if zero_k {
            SigmaInvOp {
                inv_noise,
                core_chol: None,
            }
        } else {
            let (min_eig, _) = min_eigenpair(k)?;
            if min_eig <= 0.0 {
                return Err(FrkError::NotPositiveDefinite("basis covariance"));
            }
            let max_eig = min_eigenpair(&(-k.clone()))?.0.abs();
            if max_eig / min_eig > COND_LIMIT {
                return Err(FrkError::Numerical(alloc::format!(
                    "basis covariance condition number {:.3e} exceeds {COND_LIMIT:.0e}",
                    max_eig / min_eig
                )));
            }
            let k_chol = Cholesky::new(k.clone())
                .ok_or(FrkError::NotPositiveDefinite("basis covariance"))?;
            let k_inv = k_chol.inverse();
            let a_mat = z_obs.gram_weighted(&inv_noise);
            let core = &k_inv + &a_mat;
            let core_chol = Cholesky::new(0.5 * (&core + core.transpose())).ok_or(
                FrkError::NotPositiveDefinite("low-rank core (K^-1 + Z' D^-1 Z)"),
            )?;
            SigmaInvOp {
                inv_noise,
                core_chol: Some(core_chol),
            }
        };

        let x = design.matrix_observed(&grid)?;
        let y = DVector::from_vec(grid.observed_values());
        let (beta, trend_cov) = gls_beta(&x, &y, |v| sigma_inv.apply(&z_obs, v))?;

        let resid = &y - &x * &beta;
        let sigma_resid = sigma_inv.apply(&z_obs, &resid);
        let prediction_weights = k * z_obs.tr_mul_vec(&sigma_resid);

        let (shrinkage, trend_cross) = if zero_k {
            (DMatrix::zeros(r, r), DMatrix::zeros(x.ncols(), r))
        } else {
            // Z' Sigma^-1 Z = A - A core^-1 A with A = Z' D^-1 Z.
            let a_mat = z_obs.gram_weighted(&sigma_inv.inv_noise);
            let core_chol = sigma_inv.core_chol.as_ref().expect("core present");
            let g_mat = &a_mat - &a_mat * core_chol.solve(&a_mat);
            let g_mat = 0.5 * (&g_mat + g_mat.transpose());
            let shrinkage = k * &g_mat * k;
            // X' Sigma^-1 Z K via Sigma^-1 X (p columns).
            let mut sigma_inv_x = DMatrix::zeros(x.nrows(), x.ncols());
            for j in 0..x.ncols() {
                let col = sigma_inv.apply(&z_obs, &x.column(j).into_owned());
                sigma_inv_x.set_column(j, &col);
            }
            let zt_six = z_obs.tr_mul_dense(&sigma_inv_x);
            let trend_cross = zt_six.transpose() * k;
            (0.5 * (&shrinkage + shrinkage.transpose()), trend_cross)
        };

        Ok(Self {
            grid,
            design,
            basis,
            params,
            v_diag,
            beta,
            z_obs,
            sigma_inv,
            prediction_weights,
            shrinkage,
            trend_cross,
            trend_cov,
        })
    }

    /// Apply `Sigma^-1` to a vector over the observed rows without ever
    /// forming the full covariance.
    pub fn apply_sigma_inv(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.z_obs.nrows() {
            return Err(FrkError::DimensionMismatch {
                what: "vector for Sigma^-1",
                expected: self.z_obs.nrows(),
                got: v.len(),
            });
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(FrkError::NonFinite(i));
        }
        Ok(self.sigma_inv.apply(&self.z_obs, v))
    }

    /// Predict the hidden process and its mean squared prediction error at
    /// arbitrary locations. Points outside every basis support degrade to
    /// the trend prediction with trend-only uncertainty.
    pub fn predict(&self, points: &[Location]) -> Result<Predictions> {
        let z_new = self.basis.evaluate_at(points);
        let k = &self.params.basis_cov;
        let mut hhat = Vec::with_capacity(points.len());
        let mut mspe = Vec::with_capacity(points.len());
        for (i, &point) in points.iter().enumerate() {
            let x_row = DVector::from_vec(self.design.row(point)?);
            let trend = x_row.dot(&self.beta);
            let spatial = z_new.row_dot(i, &self.prediction_weights);
            hhat.push(trend + spatial);

            let prior = z_new.row_quad_form(i, k);
            let shrink = z_new.row_quad_form(i, &self.shrinkage);
            let u = &x_row - z_new.mat_mul_row(&self.trend_cross, i);
            let trend_term = (u.transpose() * &self.trend_cov * &u)[(0, 0)];
            let mut value = prior - shrink + trend_term;
            if value < 0.0 {
                if value > MSPE_ROUNDOFF {
                    log::warn!(
                        "clamping mean squared prediction error {value:.3e} to zero at point {i}"
                    );
                    value = 0.0;
                } else {
                    return Err(FrkError::Numerical(alloc::format!(
                        "negative mean squared prediction error {value:.3e} at point {i}"
                    )));
                }
            }
            mspe.push(value);
        }
        Ok(Predictions { hhat, mspe })
    }

    pub fn params(&self) -> &CovParams {
        &self.params
    }

    /// Generalized least squares trend coefficients.
    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn design(&self) -> &TrendDesign {
        &self.design
    }

    pub fn measurement_variance(&self) -> Option<&[f64]> {
        self.v_diag.as_deref()
    }
}
