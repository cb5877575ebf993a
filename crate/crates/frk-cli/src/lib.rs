//! Harness around `frk-core`: Gaussian field simulation, holdout
//! cross-validation, configuration, and the file formats the `frk` binary
//! speaks.

pub mod config;
pub mod crossval;
pub mod io;
pub mod sim;

pub use config::{Config, SimSection};
pub use crossval::{cross_validate, CvReport, FrkSettings, Method};
pub use sim::{simulate_gp, simulate_low_rank, GpSimulator, LowRankSimSpec, SimSpec};

/// Errors from the harness layer (simulation, file formats, configuration).
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Core(#[from] frk_core::FrkError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
