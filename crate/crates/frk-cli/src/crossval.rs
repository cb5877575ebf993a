//! Holdout cross-validation of prediction methods.
//!
//! Each repetition removes a random fraction of the observed data, fits
//! every requested method on the remainder, predicts the holdout, and
//! scores it by mean squared prediction error. Reports aggregate the mean
//! and sample standard deviation over repetitions. Repetitions are
//! independent (each derives its own random stream), so they merge
//! deterministically regardless of execution order.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use frk_core::{detrend_ols, FitOptions, FittedModel, Grid, TrendDesign};

use crate::HarnessError;

/// A prediction method entered in the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Ordinary least squares trend only.
    Ols,
    /// Fixed Rank Kriging.
    Frk,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::Frk => "FRK",
        }
    }
}

/// FRK configuration used inside cross-validation.
#[derive(Debug, Clone)]
pub struct FrkSettings {
    pub basis_counts: Vec<usize>,
    pub bins: usize,
    pub trend: TrendDesign,
    pub options: FitOptions,
}

/// Aggregated cross-validation result for one method at one holdout
/// fraction.
#[derive(Debug, Clone)]
pub struct CvReport {
    pub method: String,
    pub fraction: f64,
    /// Successful repetitions entering the aggregates.
    pub reps: usize,
    /// Repetitions whose fit failed (excluded from the aggregates).
    pub failed: usize,
    pub mean_mspe: f64,
    pub std_mspe: f64,
    pub wall: Duration,
}

fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Run `reps` random-holdout repetitions at the given fraction for every
/// method. The same holdout splits are used across methods within a
/// repetition, and split `i` depends only on `(seed, i)`.
pub fn cross_validate(
    grid: &Grid,
    methods: &[Method],
    fraction: f64,
    reps: usize,
    seed: u64,
    frk: &FrkSettings,
) -> Result<Vec<CvReport>, HarnessError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(HarnessError::InvalidSpec(
            "holdout fraction must lie strictly between 0 and 1".into(),
        ));
    }
    if reps == 0 {
        return Err(HarnessError::InvalidSpec("at least one repetition is required".into()));
    }
    let observed = grid.observed_indices();
    let n_obs = observed.len();
    let n_holdout = ((n_obs as f64) * fraction).round() as usize;
    if n_holdout == 0 || n_holdout >= n_obs {
        return Err(HarnessError::InvalidSpec(format!(
            "holdout of {n_holdout} from {n_obs} observations leaves nothing to fit or test"
        )));
    }

    let mut mspe_by_method: Vec<Vec<f64>> = vec![Vec::with_capacity(reps); methods.len()];
    let mut failed: Vec<usize> = vec![0; methods.len()];
    let mut wall: Vec<Duration> = vec![Duration::ZERO; methods.len()];

    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64 + 1);
        let holdout: Vec<usize> = rand::seq::index::sample(&mut rng, n_obs, n_holdout)
            .into_iter()
            .map(|k| observed[k])
            .collect();
        let train = grid.with_masked(&holdout);
        let test_points: Vec<_> = holdout.iter().map(|&i| grid.location(i)).collect();
        let test_values: Vec<f64> = holdout.iter().map(|&i| grid.value(i).unwrap()).collect();

        for (m_idx, method) in methods.iter().enumerate() {
            let start = Instant::now();
            let predicted = match method {
                Method::Ols => predict_ols(&train, &frk.trend, &test_points),
                Method::Frk => predict_frk(&train, frk, &test_points),
            };
            wall[m_idx] += start.elapsed();
            match predicted {
                Ok(pred) => {
                    let mspe = pred
                        .iter()
                        .zip(&test_values)
                        .map(|(p, y)| (y - p).powi(2))
                        .sum::<f64>()
                        / test_values.len() as f64;
                    mspe_by_method[m_idx].push(mspe);
                }
                Err(err) => {
                    failed[m_idx] += 1;
                    log::warn!(
                        "{} failed on repetition {rep}: {err}; excluding it from the aggregate",
                        method.name()
                    );
                }
            }
        }
    }

    let mut reports = Vec::with_capacity(methods.len());
    for (m_idx, method) in methods.iter().enumerate() {
        let scores = &mspe_by_method[m_idx];
        if scores.is_empty() {
            return Err(HarnessError::Simulation(format!(
                "{} failed on every repetition",
                method.name()
            )));
        }
        let (mean, std) = mean_and_sample_std(scores);
        reports.push(CvReport {
            method: method.name().to_string(),
            fraction,
            reps: scores.len(),
            failed: failed[m_idx],
            mean_mspe: mean,
            std_mspe: std,
            wall: wall[m_idx],
        });
    }
    Ok(reports)
}

fn predict_ols(
    train: &Grid,
    trend: &TrendDesign,
    points: &[frk_core::Location],
) -> Result<Vec<f64>, HarnessError> {
    let (beta, _) = detrend_ols(train, trend).map_err(HarnessError::Core)?;
    points
        .iter()
        .map(|&p| {
            let row = trend.row(p).map_err(HarnessError::Core)?;
            Ok(DVector::from_vec(row).dot(&beta))
        })
        .collect()
}

fn predict_frk(
    train: &Grid,
    frk: &FrkSettings,
    points: &[frk_core::Location],
) -> Result<Vec<f64>, HarnessError> {
    let model = FittedModel::fit(
        train.clone(),
        frk.trend.clone(),
        &frk.basis_counts,
        frk.bins,
        None,
        &frk.options,
    )
    .map_err(HarnessError::Core)?;
    Ok(model.predict(points).map_err(HarnessError::Core)?.hhat)
}
