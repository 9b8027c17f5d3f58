use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("stale cache: produced by layer {cache_layer} v{cache_version}, used with layer {layer} v{version}")]
    StaleCache {
        cache_layer: u64,
        cache_version: u64,
        layer: u64,
        version: u64,
    },
    #[error("value outside the loss domain: {0}")]
    DomainError(String),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptPayload(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
