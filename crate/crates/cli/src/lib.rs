//! Reproducible experiments on top of `plimit-core`: JSON configs in, report
//! bundles with CSV fields and SVG plots out.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod plot;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use experiment::{demo_poisson_learning, run_experiment, Report};
