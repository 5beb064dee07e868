//! Configuration, artifact layout and pipeline stages of the `cptag`
//! command-line tool.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{run, Stage, Workspace};
