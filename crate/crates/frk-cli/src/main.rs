//! `frk` command line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use frk_cli::{config::Config, crossval, io, sim, HarnessError};
use frk_core::{
    binned_moments, detrend_ols, fit_cov_params, make_bins, sigma2_scan, BasisSet, FitOptions,
    FittedModel, Grid, TrendDesign,
};

#[derive(Parser)]
#[command(
    name = "frk",
    about = "Fixed Rank Kriging: simulation, fitting, prediction, cross-validation, and scans",
    version
)]
struct Cli {
    /// Configuration file (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if absent).
    #[arg(long, global = true, default_value = "frk-out")]
    out: PathBuf,

    /// Bin count override.
    #[arg(long, global = true)]
    bins: Option<usize>,

    /// Basis counts per resolution, comma separated (e.g. 4,25).
    #[arg(long, global = true, value_delimiter = ',')]
    basis: Option<Vec<usize>>,

    /// Use robustness-weighted estimation.
    #[arg(long, global = true)]
    weighted: bool,

    /// Iteration cap for the constrained covariance fit.
    #[arg(long, global = true)]
    max_iter: Option<usize>,

    /// Relative eigenvalue floor for the positive definiteness check.
    #[arg(long, global = true)]
    pd_tol: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GridInput {
    /// Input grid: point-list CSV (x,y,value) or raster (see --raster).
    #[arg(long)]
    grid: PathBuf,

    /// Treat the input grid as a raster file.
    #[arg(long)]
    raster: bool,

    /// Optional per-location measurement variance CSV (x,y,v).
    #[arg(long)]
    variance: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Gaussian field from the configuration and write it as a
    /// point-list CSV and a raster.
    Simulate,

    /// Fit the covariance parameters and write the fit trace and bin
    /// diagnostics.
    Fit(GridInput),

    /// Fit, then predict: fill a raster's missing cells (--fill) or
    /// predict at points from a CSV (--at).
    Predict {
        #[command(flatten)]
        input: GridInput,

        /// Predict the missing cells and write a filled raster
        /// (raster input only).
        #[arg(long)]
        fill: bool,

        /// CSV of prediction points (x,y header, further columns ignored).
        #[arg(long)]
        at: Option<PathBuf>,
    },

    /// Cross-validate OLS against FRK at the configured holdout fractions.
    Cv {
        #[command(flatten)]
        input: GridInput,

        /// Holdout fraction override (repeatable via comma list).
        #[arg(long, value_delimiter = ',')]
        fraction: Option<Vec<f64>>,

        /// Repetitions override.
        #[arg(long)]
        reps: Option<usize>,
    },

    /// Scan sigma2 against the minimum eigenvalue and the sum of squares.
    Scan {
        #[command(flatten)]
        input: GridInput,

        /// Number of scan points.
        #[arg(long)]
        points: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<Config, HarnessError> {
    let mut config = match &cli.config {
        Some(path) => Config::from_path(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(bins) = cli.bins {
        config.bins = bins;
    }
    if let Some(basis) = &cli.basis {
        config.basis = basis.clone();
    }
    if cli.weighted {
        config.weighted = true;
    }
    if let Some(max_iter) = cli.max_iter {
        config.max_iter = max_iter;
    }
    if let Some(pd_tol) = cli.pd_tol {
        config.pd_tol = pd_tol;
    }
    Ok(config)
}

fn fit_options(config: &Config) -> FitOptions {
    FitOptions {
        weighted: config.weighted,
        max_iter: config.max_iter,
        pd_tol: config.pd_tol,
    }
}

fn load_grid(input: &GridInput) -> Result<(Grid, Option<io::RasterMeta>), HarnessError> {
    if input.raster {
        let (grid, meta) = io::read_raster_csv(&input.grid)?;
        Ok((grid, Some(meta)))
    } else {
        Ok((io::read_grid_csv(&input.grid)?, None))
    }
}

fn load_variance(input: &GridInput, grid: &Grid) -> Result<Option<Vec<f64>>, HarnessError> {
    input
        .variance
        .as_deref()
        .map(|p| io::read_variance_csv(p, grid))
        .transpose()
}

/// Prediction points CSV: x,y header, one point per row.
fn read_points_csv(path: &Path) -> Result<Vec<frk_core::Location>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("x") || headers.get(1).map(str::trim) != Some("y") {
        return Err(HarnessError::Format(format!(
            "points CSV must start with header x,y; found {headers:?}"
        )));
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record?;
        let x: f64 = record[0]
            .trim()
            .parse()
            .map_err(|_| HarnessError::Format("bad x field".into()))?;
        let y: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| HarnessError::Format("bad y field".into()))?;
        points.push(frk_core::Location::new(x, y));
    }
    Ok(points)
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let config = load_config(cli)?;
    std::fs::create_dir_all(&cli.out)?;

    match &cli.command {
        Command::Simulate => {
            let spec = config.sim.spec(config.seed);
            let grid = sim::simulate_gp(&spec)?;
            let csv_path = cli.out.join("simulated.csv");
            io::write_grid_csv(&csv_path, &grid)?;
            let meta = io::RasterMeta {
                ncols: spec.nx,
                nrows: spec.ny,
                x0: 0.0,
                y0: 0.0,
                dx: spec.dx,
                dy: spec.dy,
            };
            let raster_path = cli.out.join("simulated.raster.csv");
            io::write_raster_csv(&raster_path, &meta, grid.values())?;
            println!(
                "simulated {} locations (sill {}, range {}, nugget {}) -> {}",
                grid.len(),
                spec.partial_sill,
                spec.range,
                spec.nugget,
                csv_path.display()
            );
        }

        Command::Fit(input) => {
            let (grid, _) = load_grid(input)?;
            let variance = load_variance(input, &grid)?;
            let (_, residuals) = detrend_ols(&grid, &TrendDesign::Linear)?;
            let basis = BasisSet::build(&grid, &config.basis)?;
            let scheme = make_bins(&grid, config.bins)?;
            let summary = binned_moments(&residuals, &scheme, &basis, variance.as_deref())?;
            io::write_bin_diagnostics(&cli.out.join("bins.csv"), &summary)?;
            let params = fit_cov_params(&summary, &fit_options(&config))?;
            io::write_trace_csv(&cli.out.join("trace.csv"), &params.trace)?;
            io::write_trace_dat(&cli.out.join("trace.dat"), &params.trace)?;
            println!(
                "fit converged after {} iterations: sigma2 = {:.6}, min eigenvalue = {:.3e} ({} basis functions, {} bins)",
                params.iterations,
                params.sigma2,
                params.min_eigenvalue,
                basis.r(),
                summary.n_bins()
            );
        }

        Command::Predict { input, fill, at } => {
            let (grid, meta) = load_grid(input)?;
            let variance = load_variance(input, &grid)?;
            let model = FittedModel::fit(
                grid.clone(),
                TrendDesign::Linear,
                &config.basis,
                config.bins,
                variance,
                &fit_options(&config),
            )?;
            println!(
                "fit: sigma2 = {:.6}, min eigenvalue = {:.3e}, {} iterations",
                model.params().sigma2,
                model.params().min_eigenvalue,
                model.params().iterations
            );
            if *fill {
                let meta = meta.ok_or_else(|| {
                    HarnessError::InvalidSpec("--fill requires a raster input".into())
                })?;
                let missing: Vec<usize> = (0..grid.len())
                    .filter(|&i| !grid.is_observed(i))
                    .collect();
                let points: Vec<_> = missing.iter().map(|&i| grid.location(i)).collect();
                let preds = model.predict(&points)?;
                let mut filled: Vec<Option<f64>> = grid.values().to_vec();
                for (k, &i) in missing.iter().enumerate() {
                    filled[i] = Some(preds.hhat[k]);
                }
                io::write_raster_csv(&cli.out.join("filled.raster.csv"), &meta, &filled)?;
                io::write_predictions_csv(&cli.out.join("predictions.csv"), &points, &preds)?;
                println!(
                    "filled {} missing cells -> {}",
                    missing.len(),
                    cli.out.join("filled.raster.csv").display()
                );
            } else {
                let points = match at {
                    Some(path) => read_points_csv(path)?,
                    None => grid.locations().to_vec(),
                };
                let preds = model.predict(&points)?;
                io::write_predictions_csv(&cli.out.join("predictions.csv"), &points, &preds)?;
                println!(
                    "predicted {} points -> {}",
                    points.len(),
                    cli.out.join("predictions.csv").display()
                );
            }
        }

        Command::Cv {
            input,
            fraction,
            reps,
        } => {
            let (grid, _) = load_grid(input)?;
            let fractions = fraction.clone().unwrap_or_else(|| config.fractions.clone());
            let reps = reps.unwrap_or(config.reps);
            let settings = crossval::FrkSettings {
                basis_counts: config.basis.clone(),
                bins: config.bins,
                trend: TrendDesign::Linear,
                options: fit_options(&config),
            };
            let mut all = Vec::new();
            for &f in &fractions {
                let reports = crossval::cross_validate(
                    &grid,
                    &[crossval::Method::Ols, crossval::Method::Frk],
                    f,
                    reps,
                    config.seed,
                    &settings,
                )?;
                for r in &reports {
                    println!(
                        "{:>4} fraction {:.2}: mean MSPE {:.6} (std {:.6}, {} reps, {} failed, {:.2}s)",
                        r.method,
                        r.fraction,
                        r.mean_mspe,
                        r.std_mspe,
                        r.reps,
                        r.failed,
                        r.wall.as_secs_f64()
                    );
                }
                all.extend(reports);
            }
            io::write_cv_csv(&cli.out.join("cv.csv"), &all)?;
        }

        Command::Scan { input, points } => {
            let (grid, _) = load_grid(input)?;
            let variance = load_variance(input, &grid)?;
            let (_, residuals) = detrend_ols(&grid, &TrendDesign::Linear)?;
            let basis = BasisSet::build(&grid, &config.basis)?;
            let scheme = make_bins(&grid, config.bins)?;
            let summary = binned_moments(&residuals, &scheme, &basis, variance.as_deref())?;
            let scan = sigma2_scan(&summary, points.unwrap_or(config.scan_points))?;
            io::write_scan_csv(&cli.out.join("scan.csv"), &scan)?;
            io::write_scan_dat(&cli.out.join("scan.dat"), &scan)?;
            let feasible = scan
                .iter()
                .filter(|p| p.min_eigenvalue > 0.0)
                .map(|p| p.sigma2)
                .fold(0.0, f64::max);
            println!(
                "scanned {} sigma2 values; largest with positive definite K: {:.6} -> {}",
                scan.len(),
                feasible,
                cli.out.join("scan.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
