use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("batch size must be positive")]
    ZeroBatchSize,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("augmentation pair must contain two distinct specs")]
    DuplicatePair,
    #[error("shear factor {0} outside [-1, 1]")]
    FactorOutOfRange(f32),
    #[error("canny thresholds must satisfy 0 < low < high <= 1 and sigma > 0 (got sigma={sigma}, low={low}, high={high})")]
    BadThresholds { sigma: f32, low: f32, high: f32 },
    #[error("unknown augmentation kind `{0}`")]
    UnknownKind(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),
    #[error("conditional is not one-hot: {0:?}")]
    BadOneHot(Vec<f64>),
    #[error("latent transform is singular or ill-conditioned (condition estimate {0:e})")]
    SingularTransform(f64),
    #[error("latent set is empty; cannot build a bounding box")]
    DegenerateBox,
    #[error("interpolation needs at least 2 steps, got {0}")]
    BadSteps(usize),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt checkpoint manifest: {0}")]
    CorruptManifest(String),
    #[error("checkpoint payload too short: need {needed} bytes, have {available}")]
    ShortPayload { needed: usize, available: usize },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
