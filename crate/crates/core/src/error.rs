use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}{}: {message}", fmt_index(.index))]
    Parse {
        source_name: String,
        index: Option<usize>,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("duplicate key {0}")]
    DuplicateKey(String),

    #[error("reserved label \"empty\" (id {label}) in record {image_id}; retrieval databases must not contain it")]
    ReservedLabel { image_id: String, label: u32 },

    #[error("corrupt manifest {path}: {message}")]
    CorruptManifest { path: PathBuf, message: String },

    #[error("vectors.bin holds {actual} bytes but the manifest declares {count} x {dimension} float32 ({expected} bytes){}", fmt_implied(.implied_dimension))]
    ByteCount {
        expected: u64,
        actual: u64,
        count: usize,
        dimension: usize,
        implied_dimension: Option<usize>,
    },

    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },

    #[error("row {row} has zero norm; cosine similarity is undefined")]
    ZeroNorm { row: usize },

    #[error("row {row} has no label")]
    Unlabeled { row: usize },

    #[error("zero-area box")]
    ZeroArea,

    #[error("mask rect {width}x{height} does not fit a {canvas}x{canvas} canvas")]
    MaskTooLarge { width: u32, height: u32, canvas: u32 },

    #[error("missing provider coverage for {image_id} ({variant})")]
    MissingCoverage { image_id: String, variant: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: {left} predictions vs {right} ground-truth labels")]
    LengthMismatch { left: usize, right: usize },
}

fn fmt_index(index: &Option<usize>) -> String {
    index.map(|i| format!(" entry {i}")).unwrap_or_default()
}

fn fmt_implied(dim: &Option<usize>) -> String {
    dim.map(|d| format!("; file is sized for dimension {d}"))
        .unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: &str, index: Option<usize>, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            index,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
