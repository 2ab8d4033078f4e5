//! Command-line front end: CSV/JSON input, run configuration and report files.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::{load_config, parse_config, RunConfig};
pub use error::{CliError, Result};
pub use io::{load_csv, write_csv};
