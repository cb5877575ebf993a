//! Harness-level checks: the simulator against an empirical variogram
//! oracle, detrending against the known variance decomposition, and
//! end-to-end determinism.

use frk_cli::crossval::{cross_validate, FrkSettings, Method};
use frk_cli::sim::{GpSimulator, SimSpec};
use frk_core::{detrend_ols, FitOptions, TrendDesign};

/// Empirical semivariogram over pairs whose distance falls in
/// `[lo, hi)`: half the mean squared difference.
fn empirical_semivariance(grid: &frk_core::Grid, lo: f64, hi: f64) -> (f64, usize) {
    let obs = grid.observed_indices();
    let mut acc = 0.0;
    let mut count = 0usize;
    for (a, &i) in obs.iter().enumerate() {
        for &j in &obs[a + 1..] {
            let d = grid.location(i).distance(&grid.location(j));
            if d >= lo && d < hi {
                let diff = grid.value(i).unwrap() - grid.value(j).unwrap();
                acc += 0.5 * diff * diff;
                count += 1;
            }
        }
    }
    (acc / count as f64, count)
}

#[test]
fn variogram_sill_at_long_range() {
    // At separations far beyond the range the semivariance of
    // `W + eps` converges to partial sill + nugget. Averaged over
    // replicates to tame the Monte-Carlo error.
    let spec = SimSpec {
        nx: 20,
        ny: 20,
        dx: 0.5,
        dy: 0.5,
        partial_sill: 5.5,
        range: 1.0,
        nugget: 1.375,
        beta: vec![],
        seed: 0,
    };
    let sim = GpSimulator::new(spec.clone()).unwrap();
    let mut acc = 0.0;
    let reps = 50;
    for seed in 0..reps {
        let grid = sim.simulate_with_seed(seed);
        let (gamma, pairs) = empirical_semivariance(&grid, 5.0, 8.0);
        assert!(pairs > 1000, "need plenty of long-range pairs, got {pairs}");
        acc += gamma;
    }
    let gamma = acc / reps as f64;
    let expected = spec.partial_sill + spec.nugget;
    let rel = (gamma - expected).abs() / expected;
    assert!(
        rel < 0.15,
        "long-range semivariance {gamma:.3} vs sill+nugget {expected:.3} (relative error {rel:.3})"
    );
}

#[test]
fn variogram_near_origin_sees_the_nugget() {
    // Just above zero separation the semivariance drops toward the
    // nugget plus the short-range part of the exponential.
    let spec = SimSpec {
        nx: 20,
        ny: 20,
        dx: 0.1,
        dy: 0.1,
        partial_sill: 5.5,
        range: 1.0,
        nugget: 1.375,
        beta: vec![],
        seed: 0,
    };
    let sim = GpSimulator::new(spec.clone()).unwrap();
    let mut acc = 0.0;
    let reps = 50;
    for seed in 0..reps {
        let grid = sim.simulate_with_seed(seed);
        let (gamma, _) = empirical_semivariance(&grid, 0.05, 0.15);
        acc += gamma;
    }
    let gamma = acc / reps as f64;
    // gamma(d) = nugget + sill (1 - exp(-d)); at d = 0.1 that is about
    // 1.375 + 5.5 * 0.0952 = 1.898.
    let expected = spec.nugget + spec.partial_sill * (1.0 - (-0.1f64).exp());
    let rel = (gamma - expected).abs() / expected;
    assert!(
        rel < 0.15,
        "short-range semivariance {gamma:.3} vs expected {expected:.3} (relative error {rel:.3})"
    );
}

#[test]
fn ols_residual_variance_matches_decomposition() {
    // Residuals after detrending a mean-zero field carry essentially the
    // whole variance: partial sill + nugget, up to Monte-Carlo error.
    let spec = SimSpec {
        nx: 25,
        ny: 25,
        dx: 0.25,
        dy: 0.25,
        partial_sill: 5.5,
        range: 1.0,
        nugget: 1.375,
        beta: vec![],
        seed: 0,
    };
    let sim = GpSimulator::new(spec.clone()).unwrap();
    let mut acc = 0.0;
    let reps = 12;
    for seed in 0..reps {
        let grid = sim.simulate_with_seed(seed);
        let (_, residuals) = detrend_ols(&grid, &TrendDesign::Linear).unwrap();
        let r: Vec<f64> = residuals.into_iter().flatten().collect();
        acc += r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
    }
    let variance = acc / reps as f64;
    let expected = spec.partial_sill + spec.nugget;
    let rel = (variance - expected).abs() / expected;
    assert!(
        rel < 0.2,
        "residual variance {variance:.3} vs sill+nugget {expected:.3} (relative error {rel:.3})"
    );
}

#[test]
fn end_to_end_determinism() {
    // Same seed: identical simulation, identical cross-validation
    // reports.
    let spec = SimSpec {
        nx: 24,
        ny: 24,
        dx: 6.0 / 23.0,
        dy: 6.0 / 23.0,
        partial_sill: 5.5,
        range: 1.0,
        nugget: 1.375,
        beta: vec![],
        seed: 5,
    };
    let grid_a = frk_cli::simulate_gp(&spec).unwrap();
    let grid_b = frk_cli::simulate_gp(&spec).unwrap();
    assert_eq!(grid_a.observed_values(), grid_b.observed_values());

    let settings = FrkSettings {
        basis_counts: vec![4, 16],
        bins: 48,
        trend: TrendDesign::Linear,
        options: FitOptions::default(),
    };
    let run = || {
        cross_validate(
            &grid_a,
            &[Method::Ols, Method::Frk],
            0.2,
            6,
            17,
            &settings,
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra.mean_mspe, rb.mean_mspe);
        assert_eq!(ra.std_mspe, rb.std_mspe);
        assert_eq!(ra.reps, rb.reps);
        assert_eq!(ra.failed, rb.failed);
    }
}

#[test]
fn holdout_and_training_partition_observed_data() {
    // Masked training grids and holdout sets never overlap and cover all
    // observed rows; checked indirectly through with_masked.
    let spec = SimSpec {
        nx: 10,
        ny: 10,
        dx: 1.0,
        dy: 1.0,
        partial_sill: 1.0,
        range: 2.0,
        nugget: 0.5,
        beta: vec![],
        seed: 3,
    };
    let grid = frk_cli::simulate_gp(&spec).unwrap();
    let holdout: Vec<usize> = (0..100).step_by(4).collect();
    let train = grid.with_masked(&holdout);
    assert_eq!(train.n_observed() + holdout.len(), grid.n_observed());
    for &i in &holdout {
        assert!(!train.is_observed(i));
        assert!(grid.is_observed(i));
    }
}
