use crate::grad::GradError;
use crate::kspace::KspaceError;
use crate::metrics::MetricsError;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("file ends early: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    Version(u8),
    #[error("unknown dtype code {0}")]
    Dtype(u8),
    #[error("tensor dimensions {0:?} overflow the addressable size")]
    DimOverflow(Vec<u64>),
    #[error("invalid record {index}: {reason}")]
    Record { index: usize, reason: String },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Train(#[from] GradError),
    #[error(transparent)]
    Synth(#[from] KspaceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl IoError {
    /// Stable identifier printed in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            IoError::Truncated { .. } => "truncated",
            IoError::BadMagic { .. } => "bad_magic",
            IoError::Version(_) => "bad_version",
            IoError::Dtype(_) => "bad_dtype",
            IoError::DimOverflow(_) => "dim_overflow",
            IoError::Record { .. } => "bad_record",
            IoError::TrailingBytes(_) => "trailing_bytes",
            IoError::File { .. } => "file",
            IoError::Json { .. } => "json",
            IoError::Config(_) => "config",
            IoError::Checkpoint(_) => "checkpoint",
            IoError::Inconsistent(_) => "inconsistent",
            IoError::Train(_) => "train",
            IoError::Synth(_) => "synth",
            IoError::Metrics(_) => "metrics",
        }
    }

    /// Process exit status for the error's category.
    pub fn exit_code(&self) -> i32 {
        match self {
            IoError::Truncated { .. }
            | IoError::BadMagic { .. }
            | IoError::Version(_)
            | IoError::Dtype(_)
            | IoError::DimOverflow(_)
            | IoError::Record { .. }
            | IoError::TrailingBytes(_) => 3,
            IoError::File { .. } => 4,
            IoError::Json { .. } | IoError::Config(_) | IoError::Inconsistent(_) => 2,
            IoError::Checkpoint(_) => 5,
            IoError::Train(_) | IoError::Synth(_) | IoError::Metrics(_) => 6,
        }
    }

    pub fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        IoError::File { path: path.display().to_string(), source }
    }
}
