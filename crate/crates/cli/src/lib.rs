//! Command-line orchestration for the simcal toolkit: configuration, the
//! on-disk bundle format, multi-seed calibration runs and theory sweeps.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;
pub mod record;

pub use config::{ExperimentConfig, Method};
pub use error::{CliError, CliResult};
pub use record::{FittedModel, RunRecord};
