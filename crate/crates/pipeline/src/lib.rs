//! Structure-to-map workflows: pair curation, tile datasets, GAN training,
//! tiled inference, evaluation and runtime benchmarks.

pub mod bench;
pub mod cli;
pub mod config;
pub mod curate;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod infer;
pub mod train;

pub use error::{PipelineError, Result};
