//! Dynamic Sobol sensitivity indices for models driven by dependent,
//! stationary Gaussian vector processes.
//!
//! The pipeline: model the inputs as a stationary VAR(p) process, split the
//! trajectory of the coordinate of interest from the rest by Gaussian
//! conditioning (so the two parts are independent), and estimate the
//! per-time sensitivity index of a scalar output with a pick-and-freeze
//! Monte Carlo scheme.

pub mod conditioning;
pub mod config;
pub mod error;
pub mod ingest;
pub mod models;
pub mod numeric;
pub mod sobol;
pub mod streams;
pub mod toeplitz;
pub mod var;

pub use error::{Error, Result};
