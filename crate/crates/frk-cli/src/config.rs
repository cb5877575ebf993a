//! Run configuration: a TOML file with flag overrides on top.

use std::path::Path;

use serde::Deserialize;

use crate::sim::SimSpec;
use crate::HarnessError;

/// Simulation section of the configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub partial_sill: f64,
    pub range: f64,
    pub nugget: f64,
    pub beta: Vec<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        // 60x60 lattice with an exponential covariance: partial sill 5.5,
        // range 1, nugget 1.375 (signal-to-noise 4). The spacing makes the
        // square domain span six correlation ranges, which gives genuine
        // spatial structure at the basis scales.
        Self {
            nx: 60,
            ny: 60,
            dx: 6.0 / 59.0,
            dy: 6.0 / 59.0,
            partial_sill: 5.5,
            range: 1.0,
            nugget: 1.375,
            beta: vec![],
        }
    }
}

impl SimSection {
    pub fn spec(&self, seed: u64) -> SimSpec {
        SimSpec {
            nx: self.nx,
            ny: self.ny,
            dx: self.dx,
            dy: self.dy,
            partial_sill: self.partial_sill,
            range: self.range,
            nugget: self.nugget,
            beta: self.beta.clone(),
            seed,
        }
    }
}

/// Full configuration with defaults for every field; any subset may appear
/// in the file, and command-line flags override whatever the file set.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Bin count for the method-of-moments summaries.
    pub bins: usize,
    /// Basis function count per resolution, coarse to fine.
    pub basis: Vec<usize>,
    /// Use robustness-weighted estimation.
    pub weighted: bool,
    /// Iteration cap for the positive-definiteness-constrained fit.
    pub max_iter: usize,
    /// Relative eigenvalue floor for the positive definiteness check.
    pub pd_tol: f64,
    /// Points in a sigma2 scan.
    pub scan_points: usize,
    /// Holdout fractions for cross-validation.
    pub fractions: Vec<f64>,
    /// Cross-validation repetitions.
    pub reps: usize,
    pub sim: SimSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            bins: 100,
            basis: vec![4, 25],
            weighted: false,
            max_iter: 100,
            pd_tol: 1e-10,
            scan_points: 1500,
            fractions: vec![0.15, 0.25, 0.50],
            reps: 50,
            sim: SimSection::default(),
        }
    }
}

impl Config {
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| HarnessError::Format(format!("config: {e}")))
    }
}
