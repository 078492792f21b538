//! File formats, command implementations and parallel drivers around
//! `fked-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod output;
pub mod parallel;

pub use commands::{execute, run, Command, ModelFile};
pub use config::RunConfig;
pub use error::{CliError, Result};
