//! Experiment runner around `fedsim-core`: config files, CSV ingestion,
//! report files and SVG learning curves.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;
pub mod table;

pub use error::{CliError, CliResult};
