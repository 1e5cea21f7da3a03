//! Experiment orchestration for the point-cloud assimilation framework:
//! configuration, artifact layout and the command implementations behind
//! the `pointassim` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;

pub use commands::{Ctx, ObsMode};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
