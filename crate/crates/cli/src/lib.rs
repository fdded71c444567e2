//! Library side of the `shtc` command: configuration, table files and the
//! subcommand implementations.

pub mod commands;
pub mod config;
pub mod error;
pub mod table_io;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};
