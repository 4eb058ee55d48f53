//! Library side of the `dmt` binary: run configuration and the four commands.

pub mod commands;
pub mod config;

pub use commands::{cmd_eval, cmd_gen_data, cmd_train, cmd_verify, CliError};
pub use config::RunConfig;
