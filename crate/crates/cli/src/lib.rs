//! Pipeline subcommands and the review service, shared by the `masklet4d`
//! binary and its tests.

pub mod commands;
pub mod server;

use masklet4d::config::ConfigError;
use masklet4d::io::IoError;
use masklet4d::pipeline::PipelineError;
use masklet4d::protocol::ProtocolError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{0}")]
    Usage(String),
    #[error("serve: {0}")]
    Serve(String),
}
