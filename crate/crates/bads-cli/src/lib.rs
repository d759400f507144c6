//! Experiment harness library behind the `bads` binary: configuration,
//! run orchestration, sweeps, plots, and posterior verification glue.

pub mod config;
pub mod error;
pub mod runner;
pub mod svg;
pub mod sweep;

pub use config::{preset, CheckpointPolicy, RunConfig, ScenarioSpec};
pub use error::{CliError, Result};
pub use runner::{export_plots, read_log, read_params, run_experiment, write_params};
pub use sweep::sweep;
