use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("tape: {0}")]
    Tape(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("layer index {index} out of range ({count} parameter layers)")]
    LayerIndex { index: usize, count: usize },
    #[error("rescale: {0}")]
    Rescale(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("idx: bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },
    #[error("idx: truncated file {0}")]
    Truncated(PathBuf),
    #[error("idx: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("model spec hash mismatch: {0} vs {1}")]
    SpecHashMismatch(String, String),
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("width at level: center value {center} is not below level {level}")]
    CenterAboveLevel { center: f64, level: f64 },
    #[error("hessian-vector oracle is not symmetric (u'Hv = {uhv}, v'Hu = {vhu})")]
    NonSymmetric { uhv: f64, vhu: f64 },
    #[error("lanczos: {0}")]
    Lanczos(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
