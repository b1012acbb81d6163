//! Experiment runner around `lql-core`: JSON configs with overrides, run
//! directories with manifests, sweeps, bootstrap aggregation, bound
//! verification, hinge statistics and plot-ready series.

pub mod aggregate;
pub mod cli;
pub mod config;
mod error;
pub mod hinge;
pub mod output;
pub mod plots;
pub mod sweep;
pub mod verify;

pub use error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
/// `verify-theory` finished but some estimate exceeded its bound.
pub const EXIT_BOUNDS: i32 = 3;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "LQL_OUTPUT_ROOT";
