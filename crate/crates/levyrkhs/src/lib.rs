//! Configuration, file formats and experiment runner for `levyrkhs-core`.

pub mod config;
pub mod io;
pub mod runner;

pub use config::{ConfigError, LoadedConfig, RunConfig};
pub use runner::{run, RunOutcome};
