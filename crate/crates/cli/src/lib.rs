//! Command-line workflow and HTTP service around `aeg-core` bundles.

pub mod commands;
pub mod config;
pub mod error;
pub mod server;

pub use commands::{run, Cli};
pub use error::{CliError, Result};
