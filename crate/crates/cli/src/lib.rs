//! Command-line layer over `ilvm-core`: experiment configs, provenance
//! stamping, SVG figures and the subcommand implementations.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod provenance;
pub mod svg;

pub use cli::{run, Cli, OUT_DIR_ENV};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use provenance::Provenance;
