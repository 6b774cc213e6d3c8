//! Experiment runner for the `secureafl` simulator.
//!
//! - [`sweep`] runs one config over several seeds and writes per-run CSVs,
//!   a manifest and an aggregate `summary.json`;
//! - [`compare`] tabulates final metrics of several sweeps, defenses by
//!   attacks;
//! - [`probe`] turns per-round traces into a `theory.json` convergence
//!   report.
//!
//! Output layout of one sweep:
//!
//! ```text
//! <out>/<config stem>-<hash>/
//!     config.toml  manifest.json  summary.json  theory.json
//!     seed-<s>/config.toml  metrics.csv  trace.csv
//! ```

pub mod compare;
pub mod error;
pub mod manifest;
pub mod probe;
pub mod sweep;

pub use error::{CliError, Result};

/// Environment variable naming the default output root of `run`.
pub const OUT_ENV: &str = "SECUREAFL_OUT";
