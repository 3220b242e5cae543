//! Command-line front end: configuration, on-disk run layout and the commands
//! behind the `judgerl` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod workspace;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use workspace::{Mode, Workspace};
