//! Pipelines behind the `chargenoise` command: each subcommand wires the
//! library's generators, classifiers and fits into a run that writes CSV and
//! JSON artifacts plus a checksummed manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use manifest::{Artifacts, RunManifest};
pub use pipeline::*;
