use std::path::PathBuf;

use mapgen_core::{GridError, MetricError, MrcError, SimulateError, StructError, TileError};
use mapgen_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Structure(#[from] StructError),
    #[error(transparent)]
    Mrc(#[from] MrcError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("config: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("paired maps are on different grids: {0}")]
    GridMismatch(String),
    #[error("dataset has no training tiles")]
    EmptyDataset,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
}

/// Innermost variant name in a `Debug` rendering such as `Grid(NonFinite(3))`.
fn variant_name(debug: String) -> String {
    const WRAPPERS: [&str; 3] = ["Grid", "Structure", "Tile"];
    debug
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .find(|t| !WRAPPERS.contains(t))
        .unwrap_or("Error")
        .to_string()
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable one-word class for machine-readable error lines. Wrapped
    /// module errors report their own variant (`DimsMismatch`, `BadMagic`).
    pub fn category(&self) -> String {
        match self {
            PipelineError::Usage(_) => "UsageError".into(),
            PipelineError::Io { .. } => "IoError".into(),
            PipelineError::Mrc(MrcError::Io(_)) | PipelineError::Tile(TileError::Io(_)) => "IoError".into(),
            PipelineError::Nn(NnError::Io(_)) => "IoError".into(),
            PipelineError::Structure(e) => variant_name(format!("{e:?}")),
            PipelineError::Mrc(e) => variant_name(format!("{e:?}")),
            PipelineError::Grid(e) => variant_name(format!("{e:?}")),
            PipelineError::Simulate(e) => variant_name(format!("{e:?}")),
            PipelineError::Tile(e) => variant_name(format!("{e:?}")),
            PipelineError::Metric(e) => variant_name(format!("{e:?}")),
            PipelineError::Nn(e) => variant_name(format!("{e:?}")),
            PipelineError::Config(_) => "ConfigError".into(),
            PipelineError::Manifest(_) => "ManifestError".into(),
            PipelineError::GridMismatch(_) => "GridMismatch".into(),
            PipelineError::EmptyDataset => "EmptyDataset".into(),
            PipelineError::NonFiniteLoss { .. } => "NonFiniteLoss".into(),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
