//! Discrete p-Poisson problems on masked grids and their p -> infinity limit.

pub mod acceptance;
mod banded;
pub mod calculus;
pub mod domain;
pub mod error;
pub mod measure;
pub mod solver;
pub mod spectral;
pub mod transport;
pub mod viscosity;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use calculus::ScalarField;
pub use domain::{GridDomain, Mask, Stencil};
pub use error::{Error, Result};
pub use measure::SignedMeasure;
