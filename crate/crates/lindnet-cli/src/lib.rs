//! Experiment orchestration for `lindnet`.
//!
//! [`config`] parses and validates TOML experiment descriptions;
//! [`runner`] executes them and writes the run artifacts:
//! `trajectory.csv` (one row per iteration), `reference.csv` (exact
//! values from dense diagonalization or RK4 integration), and
//! `summary.json` (final values, errors against the reference, and the
//! complete effective configuration). Identical configurations produce
//! byte-identical CSV files.

pub mod config;
pub mod runner;

pub use config::{parse_config, parse_config_with_overrides, ConfigError, ExperimentConfig};
pub use runner::{run_oracle, run_single, run_sweep, RunStatus};
