//! File formats, dataset ingestion and the `freqcoda` command line on top of
//! `freqcoda-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod datasets;
pub mod error;
pub mod fqt;
pub mod output;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
