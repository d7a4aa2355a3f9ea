//! File formats and the command-line pipeline around `bpar-core`.
//!
//! Stages exchange versioned JSON documents (`"format": 1`) and write
//! plot-ready CSVs next to them. Datasets are directories of per-series CSV
//! files with an optional `constructs.csv`.

pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod json;
pub mod newick;

pub use error::{CliError, Result};
