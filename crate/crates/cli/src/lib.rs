//! The `corpusforge` command line and HTTP service.

pub mod commands;
pub mod config;
pub mod server;

pub use commands::CliError;
pub use config::AppConfig;
