//! Experiment configuration, presets, artifacts and the subcommands behind
//! the `domd` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod presets;

pub use commands::{cmd_check, cmd_run, cmd_sweep, cmd_trajectory, cmd_validate, execute, CheckOutcome, RunOutput, SweepSpec};
pub use config::{Experiment, Prepared};
