//! Implicit (proximal) and explicit (gradient) score-driven filters.
//!
//! The crate is organised bottom-up:
//! - [`matcore`]: small dense symmetric linear algebra.
//! - [`models`]: the catalog of observation densities.
//! - [`filter`]: update and prediction steps.
//! - [`stability`]: invertibility certificates.
//! - [`bounds`]: mean-squared-error bounds and their optimizers.
//! - [`estimate`]: maximum-likelihood calibration.
//! - [`simlab`]: data-generating processes and Monte Carlo studies.

pub mod bounds;
pub mod error;
pub mod estimate;
pub mod filter;
pub mod matcore;
pub mod models;
pub mod simlab;
pub mod stability;

pub use error::{Error, Result};
