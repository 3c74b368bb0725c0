//! Simulation library for time-domain acoustic wave propagation driven by
//! spatially white noise, with a Dirichlet obstacle and a radially stretched
//! perfectly matched layer.
//!
//! The crate is organized around the pipeline it implements:
//!
//! - [`grid`]: voxel discretization of the ball geometry and the dyadic cell
//!   partition carrying the noise.
//! - [`noise`]: piecewise-constant white-noise realizations with exact
//!   multilevel coupling through a counter-based generator.
//! - [`source`]: smooth compactly supported source strength `f(x,t) = g(x) p(t)`
//!   and its Laplace transform in time.
//! - [`oracle`]: free-space reference solutions (retarded potential, Helmholtz
//!   convolution) and the Green-continuity integral.
//! - [`solver`]: explicit leapfrog solver for the free and PML-truncated wave
//!   systems.
//! - [`analysis`]: norms, Laplace traces, error metrics, Monte Carlo driver and
//!   rate fitting.
//! - [`studies`]: the convergence and symmetry studies built from the above.
//! - [`config`] / [`runner`]: plain-text run configuration and the study
//!   dispatcher used by the command-line binary.

pub mod analysis;
pub mod config;
pub mod grid;
pub mod noise;
pub mod numerics;
pub mod oracle;
pub mod report;
pub mod runner;
pub mod solver;
pub mod source;
pub mod studies;

pub use analysis::{error_between, laplace_trace, mc_expectation, space_l2, time_space_l2};
pub use grid::{cell_partition, Box3, CellPartition, Grid, GridSpec, Region};
pub use noise::{coarsen_noise, pair_with_function, sample_noise, NoiseField};
pub use oracle::{g0_kernel, green_continuity_integral, helmholtz_convolution, retarded_potential, QuadratureSpec};
pub use solver::{cfl_dt, PmlParams, SimulationResult, WaveSolver, WaveState};
pub use source::SourceProfile;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error("invalid solver setup: {0}")]
    InvalidSolver(String),
    #[error("incompatible results: {0}")]
    Incompatible(String),
    #[error("invalid study: {0}")]
    InvalidStudy(String),
    #[error("config error: field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
