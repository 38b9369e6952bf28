//! Library side of the experiment runner; the binary in `main.rs` is a thin
//! argument parser over [`commands`].

pub mod commands;
pub mod config;

pub use commands::{cmd_evaluate, cmd_experiment, cmd_fit, cmd_generate};
pub use config::{Algorithm, ConfigError, ExperimentConfig};
