//! Command-line driver: configs, the five subcommands and their artifacts.

pub mod bound;
pub mod commands;
pub mod concentration;
pub mod config;
pub mod error;
pub mod experiment;
pub mod identities;
pub mod output;
pub mod report;
pub mod svg;

pub use commands::{execute, main_with_args, Cli, Command};
pub use config::{ExperimentConfig, Format};
pub use error::{exit, CliError, CliResult};
