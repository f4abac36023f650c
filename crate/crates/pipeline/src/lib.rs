//! Dataset generation on top of `splatgen-core`: configuration, seeding,
//! episode output and the end-to-end generator.

pub mod config;
pub mod episode;
pub mod error;
pub mod fixture;
pub mod generate;
pub mod seeds;

pub use config::{validate_config, GenerationConfig};
pub use error::{Issue, PipelineError, Result};
pub use generate::{generate, prepare, DatasetManifest, EpisodeRecord, Prepared};
