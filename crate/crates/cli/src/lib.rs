//! Library side of the `t2i` command: configuration and the command pipelines.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{dispatch, Command, Invocation};
pub use config::{Config, Source};
pub use error::{CliError, ErrorRecord};
