//! File formats, dataset loading, cohort generation and the command-line
//! driver around `sleepfuse-core`.

pub mod checkpoint;
pub mod cli;
pub mod cohort;
pub mod config;
pub mod dataset;
pub mod error;
pub mod exchange;
pub mod formats;
pub mod pipeline;

pub use error::{Error, Result};
