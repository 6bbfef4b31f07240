//! Pipeline driver: configuration, artifact formats, search traces, the
//! ablation harness and reporting, behind the `edgenas` binary.

pub mod ablate;
pub mod artifacts;
pub mod bankfile;
pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod trace;

pub use config::Config;
pub use error::{CliError, CliResult};
