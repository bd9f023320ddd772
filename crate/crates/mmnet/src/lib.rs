//! File formats, run configuration, training and evaluation commands for
//! `mmnet-core`.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod dataset;
pub mod error;
pub mod netpbm;
pub mod runner;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ConfigError, RunConfig};
pub use error::RunError;
