//! Gaussian random field simulation for validating the estimation and
//! prediction pipeline.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use frk_core::{BasisSet, Grid, Location};

use crate::HarnessError;

/// Dense simulation factorizes an `n x n` covariance, so the grid size is
/// capped; larger fields should come from [`simulate_low_rank`].
pub const MAX_DENSE_SIM: usize = 10_000;

/// Specification of a stationary exponential-covariance Gaussian field on a
/// regular lattice: `Y = X beta + W + eps` with
/// `Cov(W(s_i), W(s_j)) = partial_sill * exp(-d_ij / range)` and
/// `eps ~ N(0, nugget)` i.i.d.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub partial_sill: f64,
    pub range: f64,
    pub nugget: f64,
    /// Trend coefficients: empty for a zero-mean field, one value for an
    /// intercept, three for `(1, x, y)`.
    pub beta: Vec<f64>,
    pub seed: u64,
}

impl SimSpec {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.nx == 0 || self.ny == 0 {
            return Err(HarnessError::InvalidSpec("grid dimensions must be positive".into()));
        }
        if !(self.dx.is_finite() && self.dy.is_finite() && self.dx > 0.0 && self.dy > 0.0) {
            return Err(HarnessError::InvalidSpec("grid spacing must be positive".into()));
        }
        if !(self.partial_sill.is_finite() && self.partial_sill >= 0.0) {
            return Err(HarnessError::InvalidSpec("partial sill must be nonnegative".into()));
        }
        if !(self.range.is_finite() && self.range > 0.0) {
            return Err(HarnessError::InvalidSpec("range must be positive".into()));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(HarnessError::InvalidSpec("nugget must be nonnegative".into()));
        }
        if ![0, 1, 3].contains(&self.beta.len()) {
            return Err(HarnessError::InvalidSpec(
                "trend coefficients must be empty, an intercept, or (1, x, y)".into(),
            ));
        }
        let n = self.nx * self.ny;
        if n > MAX_DENSE_SIM {
            return Err(HarnessError::InvalidSpec(format!(
                "{n} locations exceed the dense simulation cap of {MAX_DENSE_SIM}; \
                 covariance factorization is cubic in n, use simulate_low_rank for larger fields"
            )));
        }
        Ok(())
    }

    fn trend_at(&self, loc: Location) -> f64 {
        match self.beta.len() {
            0 => 0.0,
            1 => self.beta[0],
            _ => self.beta[0] + self.beta[1] * loc.x + self.beta[2] * loc.y,
        }
    }
}

/// A simulator holding the one-time covariance factorization, so repeated
/// replicates of the same specification cost only matrix-vector work.
pub struct GpSimulator {
    spec: SimSpec,
    locations: Vec<Location>,
    /// Lower-triangular Cholesky factor of the spatial covariance.
    factor: Option<DMatrix<f64>>,
}

impl GpSimulator {
    pub fn new(spec: SimSpec) -> Result<Self, HarnessError> {
        spec.validate()?;
        let locations = Grid::lattice_locations(spec.nx, spec.ny, spec.dx, spec.dy);
        let factor = if spec.partial_sill > 0.0 {
            let n = locations.len();
            let mut cov = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let d = locations[i].distance(&locations[j]);
                    let c = spec.partial_sill * (-d / spec.range).exp();
                    cov[(i, j)] = c;
                    cov[(j, i)] = c;
                }
            }
            let chol = Cholesky::new(cov).ok_or_else(|| {
                HarnessError::Simulation(
                    "exponential covariance factorization failed; the lattice may be degenerate"
                        .into(),
                )
            })?;
            Some(chol.unpack())
        } else {
            None
        };
        Ok(Self {
            spec,
            locations,
            factor,
        })
    }

    pub fn spec(&self) -> &SimSpec {
        &self.spec
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    /// Spatial and noise components for a given seed; deterministic.
    pub fn components_with_seed(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let n = self.locations.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = match &self.factor {
            Some(l) => {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                (l * z).iter().copied().collect()
            }
            None => vec![0.0; n],
        };
        let noise_sd = self.spec.nugget.sqrt();
        let eps: Vec<f64> = (0..n)
            .map(|_| noise_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (w, eps)
    }

    /// Simulate a fully observed grid with the given seed.
    pub fn simulate_with_seed(&self, seed: u64) -> Grid {
        let (w, eps) = self.components_with_seed(seed);
        let values: Vec<f64> = self
            .locations
            .iter()
            .enumerate()
            .map(|(i, &loc)| self.spec.trend_at(loc) + w[i] + eps[i])
            .collect();
        Grid::fully_observed(self.locations.clone(), values).expect("lattice grid is valid")
    }

    /// Simulate with the specification's own seed.
    pub fn simulate(&self) -> Grid {
        self.simulate_with_seed(self.spec.seed)
    }
}

/// One-shot convenience wrapper around [`GpSimulator`].
pub fn simulate_gp(spec: &SimSpec) -> Result<Grid, HarnessError> {
    Ok(GpSimulator::new(spec.clone())?.simulate())
}

/// Specification of a field simulated from the low-rank model itself:
/// `Y = X beta + Z eta + eps` with independent basis coefficients whose
/// standard deviation is constant within each resolution. Cost is linear in
/// the number of locations, so this scales to grids the dense simulator
/// cannot touch.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankSimSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub basis_counts: Vec<usize>,
    /// Basis-coefficient standard deviation per resolution (same length as
    /// `basis_counts`).
    pub coeff_sd: Vec<f64>,
    pub nugget: f64,
    pub beta: Vec<f64>,
    pub seed: u64,
}

/// Simulate from the low-rank model. Returns the grid and the basis the
/// field was generated with.
pub fn simulate_low_rank(spec: &LowRankSimSpec) -> Result<(Grid, BasisSet), HarnessError> {
    if spec.basis_counts.len() != spec.coeff_sd.len() {
        return Err(HarnessError::InvalidSpec(
            "one coefficient standard deviation per resolution is required".into(),
        ));
    }
    if !(spec.nugget.is_finite() && spec.nugget >= 0.0) {
        return Err(HarnessError::InvalidSpec("nugget must be nonnegative".into()));
    }
    if ![0, 1, 3].contains(&spec.beta.len()) {
        return Err(HarnessError::InvalidSpec(
            "trend coefficients must be empty, an intercept, or (1, x, y)".into(),
        ));
    }
    let locations = Grid::lattice_locations(spec.nx, spec.ny, spec.dx, spec.dy);
    let shell = Grid::new(locations.clone(), vec![None; locations.len()])
        .map_err(HarnessError::Core)?;
    let basis = BasisSet::build(&shell, &spec.basis_counts).map_err(HarnessError::Core)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut eta = DVector::zeros(basis.r());
    let mut offset = 0;
    for (res, &sd) in basis.resolutions().iter().zip(&spec.coeff_sd) {
        for j in 0..res.len() {
            eta[offset + j] = sd * rng.sample::<f64, _>(StandardNormal);
        }
        offset += res.len();
    }
    let spatial = basis.evaluation().mul_vec(&eta);
    let noise_sd = spec.nugget.sqrt();
    let trend = |loc: Location| match spec.beta.len() {
        0 => 0.0,
        1 => spec.beta[0],
        _ => spec.beta[0] + spec.beta[1] * loc.x + spec.beta[2] * loc.y,
    };
    let values: Vec<f64> = locations
        .iter()
        .enumerate()
        .map(|(i, &loc)| trend(loc) + spatial[i] + noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let grid = Grid::fully_observed(locations, values).map_err(HarnessError::Core)?;
    Ok((grid, basis))
}
