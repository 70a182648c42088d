//! Command-line front end: configuration files, dataset and artifact I/O,
//! run manifests and the experiment pipeline.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod stats;

pub use cli::run;
pub use error::{CliError, CliResult};
