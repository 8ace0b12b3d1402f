//! File formats, experiment configuration and the task runner behind the
//! `xclone` command line.

pub mod config;
pub mod error;
pub mod io;
pub mod models;
pub mod tasks;

pub use config::{ExperimentConfig, Preset, TaskSettings};
pub use error::{CliError, Result};
