//! Pipeline driver: config loading, the corpus manifest and the stages run
//! by the `triagesim` binary.

pub mod classify;
pub mod config;
pub mod demo;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::{LoadedConfig, RunConfig};
pub use error::CliError;
pub use manifest::{Corpus, CorpusManifest, Stage};
pub use stages::{Pipeline, Runtime, StageReport};
