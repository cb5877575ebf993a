//! Detrending and binned method-of-moments summaries.
//!
//! Covariance estimation never sees individual observations: ordinary least
//! squares residuals are averaged over `M` spatial bins, and everything the
//! fit needs — the binned residual means, their moment matrix, the binned
//! basis matrix, and the binned noise diagonal — is assembled here. `M`
//! sits strictly between the basis count `r` and the observation count `n`,
//! so estimation cost scales with `M`, not `n`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::basis::{lattice_centers, BasisSet};
use crate::error::{FrkError, Result};
use crate::grid::{Grid, Location};

/// Trend (fixed-effect) design. `Intercept` and `Linear` can be evaluated
/// at arbitrary locations; `Custom` carries a caller-supplied matrix over
/// the grid rows and therefore only supports fitting, not prediction at new
/// points.
#[derive(Debug, Clone)]
pub enum TrendDesign {
    /// A constant mean: x(s) = (1).
    Intercept,
    /// Intercept plus coordinates: x(s) = (1, x, y).
    Linear,
    /// Arbitrary design matrix, one row per grid location.
    Custom(DMatrix<f64>),
}

impl TrendDesign {
    /// Number of trend coefficients.
    pub fn p(&self) -> usize {
        match self {
            TrendDesign::Intercept => 1,
            TrendDesign::Linear => 3,
            TrendDesign::Custom(m) => m.ncols(),
        }
    }

    /// Design row at a location. `Custom` designs cannot be evaluated away
    /// from the grid they were supplied for.
    pub fn row(&self, loc: Location) -> Result<Vec<f64>> {
        match self {
            TrendDesign::Intercept => Ok(vec![1.0]),
            TrendDesign::Linear => Ok(vec![1.0, loc.x, loc.y]),
            TrendDesign::Custom(_) => Err(FrkError::InvalidArgument(
                "custom trend designs cannot be evaluated at new locations".into(),
            )),
        }
    }

    /// Design matrix over the observed rows of the grid.
    pub fn matrix_observed(&self, grid: &Grid) -> Result<DMatrix<f64>> {
        let obs = grid.observed_indices();
        match self {
            TrendDesign::Custom(m) => {
                if m.nrows() != grid.len() {
                    return Err(FrkError::DimensionMismatch {
                        what: "custom trend design rows",
                        expected: grid.len(),
                        got: m.nrows(),
                    });
                }
                Ok(DMatrix::from_fn(obs.len(), m.ncols(), |i, j| {
                    m[(obs[i], j)]
                }))
            }
            _ => {
                let p = self.p();
                let mut x = DMatrix::zeros(obs.len(), p);
                for (i, &row) in obs.iter().enumerate() {
                    let vals = self.row(grid.location(row))?;
                    for (j, v) in vals.into_iter().enumerate() {
                        x[(i, j)] = v;
                    }
                }
                Ok(x)
            }
        }
    }
}

/// Ordinary least squares detrend over the observed rows.
///
/// Returns the OLS coefficients and the residual vector aligned with the
/// grid (`None` at missing rows). Rank deficiency of the design is an
/// error.
pub fn detrend_ols(grid: &Grid, design: &TrendDesign) -> Result<(DVector<f64>, Vec<Option<f64>>)> {
    let x = design.matrix_observed(grid)?;
    let p = x.ncols();
    let n_obs = x.nrows();
    if n_obs < p {
        return Err(FrkError::InvalidArgument(
            "fewer observed values than trend coefficients".into(),
        ));
    }
    let y = DVector::from_vec(grid.observed_values());
    let beta = ols_solve(&x, &y)?;
    let fitted = &x * &beta;
    let mut residuals = vec![None; grid.len()];
    for (k, &row) in grid.observed_indices().iter().enumerate() {
        residuals[row] = Some(y[k] - fitted[k]);
    }
    Ok((beta, residuals))
}

/// Least squares solve with an explicit rank check (SVD-based).
pub(crate) fn ols_solve(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let p = x.ncols();
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * x.nrows().max(p) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < p {
        return Err(FrkError::RankDeficient { rank, cols: p });
    }
    svd.solve(y, tol)
        .map_err(|e| FrkError::Numerical(e.into()))
}

/// Spatial bins: lattice centers over the bounding box with each observed
/// location assigned to its nearest center (a Voronoi partition).
#[derive(Debug, Clone)]
pub struct BinScheme {
    centers: Vec<Location>,
    membership: Vec<Vec<usize>>,
}

impl BinScheme {
    /// Number of bins.
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Location] {
        &self.centers
    }

    /// Observed grid-row indices belonging to bin `m`.
    pub fn members(&self, m: usize) -> &[usize] {
        &self.membership[m]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.membership.iter().map(Vec::len).collect()
    }
}

/// Bin the observed locations of a grid into (at most) `m` Voronoi cells
/// around lattice centers. Ties go to the lowest bin index; bins that end
/// up with no observed member are dropped with a warning, reducing the bin
/// count.
pub fn make_bins(grid: &Grid, m: usize) -> Result<BinScheme> {
    let n_obs = grid.n_observed();
    if m == 0 {
        return Err(FrkError::InvalidArgument("bin count must be positive".into()));
    }
    if m > n_obs {
        return Err(FrkError::InvalidArgument(alloc::format!(
            "bin count {m} exceeds the {n_obs} observed locations"
        )));
    }
    let bbox = grid.bounding_box();
    let (centers, _) = lattice_centers(m, &bbox);
    let mut membership: Vec<Vec<usize>> = vec![Vec::new(); m];
    for &i in &grid.observed_indices() {
        let loc = grid.location(i);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (b, c) in centers.iter().enumerate() {
            let d = loc.distance(c);
            if d < best_d {
                best_d = d;
                best = b;
            }
        }
        membership[best].push(i);
    }
    let n_empty = membership.iter().filter(|m| m.is_empty()).count();
    if n_empty > 0 {
        log::warn!(
            "dropping {n_empty} of {m} bins with no observed members; estimation proceeds with {} bins",
            m - n_empty
        );
    }
    let (centers, membership): (Vec<_>, Vec<_>) = centers
        .into_iter()
        .zip(membership)
        .filter(|(_, members)| !members.is_empty())
        .unzip();
    if centers.is_empty() {
        return Err(FrkError::InvalidArgument(
            "no bins contain observed data".into(),
        ));
    }
    Ok(BinScheme { centers, membership })
}

/// Binned quantities required by the covariance fit.
#[derive(Debug, Clone)]
pub struct BinSummary {
    /// Bin centers (after empty-bin removal).
    pub centers: Vec<Location>,
    /// Observed members per bin.
    pub counts: Vec<usize>,
    /// Binned residual means.
    pub mean_residuals: DVector<f64>,
    /// Method-of-moments covariance of the binned residuals: per-bin mean
    /// squared residual on the diagonal, products of binned means off it.
    pub binned_cov: DMatrix<f64>,
    /// Binned basis matrix (`M x r`): row m is the average basis row over
    /// the bin's members.
    pub binned_basis: DMatrix<f64>,
    /// Diagonal of the binned noise matrix: the average measurement
    /// variance within each bin (all ones when `V = I`).
    pub binned_noise: DVector<f64>,
    /// Optional robustness weights (see [`robustness_weights`]).
    pub weights: Option<DVector<f64>>,
}

impl BinSummary {
    /// Number of bins.
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Basis function count.
    pub fn r(&self) -> usize {
        self.binned_basis.ncols()
    }

    /// Attach robustness weights computed from the summary itself.
    pub fn with_robustness_weights(mut self) -> Result<Self> {
        self.weights = Some(robustness_weights(&self)?);
        Ok(self)
    }
}

/// Aggregate detrended residuals into the binned summaries used by the
/// covariance fit.
///
/// `residuals` is grid-aligned (as produced by [`detrend_ols`]); `v` is the
/// optional per-location measurement-variance diagonal, identity when
/// `None`. Requires strictly more bins than basis functions, and every bin
/// must have at least one observed member (the binned variance of an empty
/// bin is undefined).
pub fn binned_moments(
    residuals: &[Option<f64>],
    scheme: &BinScheme,
    basis: &BasisSet,
    v: Option<&[f64]>,
) -> Result<BinSummary> {
    let m = scheme.len();
    let r = basis.r();
    if m <= r {
        return Err(FrkError::TooFewBins { bins: m, basis: r });
    }
    let n = basis.evaluation().nrows();
    if residuals.len() != n {
        return Err(FrkError::DimensionMismatch {
            what: "residual vector",
            expected: n,
            got: residuals.len(),
        });
    }
    if let Some(v) = v {
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

    let z = basis.evaluation();
    let mut counts = Vec::with_capacity(m);
    let mut means = DVector::zeros(m);
    let mut mean_sq = DVector::zeros(m);
    let mut binned_basis = DMatrix::zeros(m, r);
    let mut binned_noise = DVector::zeros(m);

    for (b, members) in (0..m).map(|b| (b, scheme.members(b))) {
        if members.is_empty() {
            return Err(FrkError::EmptyBin(b));
        }
        let count = members.len() as f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut sum_v = 0.0;
        for &i in members {
            let d = residuals[i].ok_or(FrkError::InvalidArgument(alloc::format!(
                "residual missing at observed row {i}"
            )))?;
            sum += d;
            sum_sq += d * d;
            sum_v += v.map_or(1.0, |v| v[i]);
            for &(col, val) in z.row(i) {
                binned_basis[(b, col)] += val;
            }
        }
        counts.push(members.len());
        means[b] = sum / count;
        mean_sq[b] = sum_sq / count;
        binned_noise[b] = sum_v / count;
        for col in 0..r {
            binned_basis[(b, col)] /= count;
        }
    }

    // Moment matrix: mean squared residual on the diagonal, rank-one
    // products of the binned means off the diagonal.
    let mut binned_cov = &means * means.transpose();
    for b in 0..m {
        binned_cov[(b, b)] = mean_sq[b];
    }

    Ok(BinSummary {
        centers: scheme.centers().to_vec(),
        counts,
        mean_residuals: means,
        binned_cov,
        binned_basis,
        binned_noise,
        weights: None,
    })
}

/// Robustness weights: `2^(-1/2) * sqrt(count_m) / V_D(u_m)` per bin.
/// Down-weights highly variable bins and up-weights well-populated ones.
/// Any bin with zero mean squared residual makes the weight undefined.
pub fn robustness_weights(summary: &BinSummary) -> Result<DVector<f64>> {
    let m = summary.n_bins();
    let mut w = DVector::zeros(m);
    for b in 0..m {
        let v_d = summary.binned_cov[(b, b)];
        if v_d <= 0.0 {
            return Err(FrkError::ZeroBinVariance(b));
        }
        w[b] = core::f64::consts::FRAC_1_SQRT_2 * (summary.counts[b] as f64).sqrt() / v_d;
    }
    Ok(w)
}
