//! Dataset files, checkpoints, experiment configuration and the benchmark
//! sweeps behind the `metashape` command.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod mvol;
pub mod split;
pub mod train;

pub use error::{CliError, Result};
pub use metashape_core as core;
