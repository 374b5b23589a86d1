//! Error type shared across the toolkit.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ---- geometry / volumes ----
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("geometry mismatch between {left} and {right}")]
    GeometryMismatch { left: String, right: String },
    #[error("ambiguous orientation: voxel axes {0} and {1} tie for the world left-right direction")]
    AmbiguousOrientation(usize, usize),
    #[error("non-invertible affine")]
    SingularAffine,
    #[error("volume contains non-finite values ({0} offending voxels)")]
    NonFiniteData(usize),

    // ---- NIfTI / file I/O ----
    #[error("{path}: bad NIfTI magic {magic:?} (expected \"n+1\\0\")")]
    BadMagic { path: PathBuf, magic: [u8; 4] },
    #[error("{path}: not a little-endian NIfTI-1 file (header size field = {size})")]
    BadHeaderSize { path: PathBuf, size: i32 },
    #[error("{path}: unsupported NIfTI datatype code {code}")]
    UnsupportedDatatype { path: PathBuf, code: i16 },
    #[error("{path}: truncated payload: expected {expected} bytes, got {actual}")]
    TruncatedPayload { path: PathBuf, expected: usize, actual: usize },
    #[error("{path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("label code {code} exceeds {dtype} range")]
    LabelOverflow { code: u32, dtype: &'static str },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    // ---- label preparation ----
    #[error("label scheme: {0}")]
    InvalidScheme(String),
    #[error("claustrum mask is empty")]
    EmptyClaustrumMask,
    #[error("label code {0} has no entry in the group map")]
    UnmappedLabel(u32),

    // ---- metrics ----
    #[error("metric {metric} is undefined: {reason}")]
    MetricUndefined { metric: &'static str, reason: String },
    #[error("empty mask passed to {0}")]
    EmptyMask(&'static str),

    // ---- atlas / QC ----
    #[error("thresholded atlas region is empty in subject space (registration failure?)")]
    EmptyAtlasRegion,
    #[error("binarized segmentation is empty")]
    EmptySegmentation,
    #[error("reference set needs at least {needed} labels, got {got}")]
    TooFewReferences { needed: usize, got: usize },
    #[error("atlas side {atlas:?} does not match requested side {requested:?}")]
    AtlasSideMismatch { atlas: crate::volume::Side, requested: crate::volume::Side },

    // ---- synthesis / training ----
    #[error("synthesis config: {0}")]
    InvalidSynthesisConfig(String),
    #[error("image has zero intensity range; cannot normalize")]
    ZeroIntensityRange,
    #[error("U-Net config: {0}")]
    InvalidUNetConfig(String),
    #[error("input dims {dims:?} not divisible by 2^{levels_minus_one} required by a {levels}-level U-Net")]
    DimsNotDivisible { dims: [usize; 3], levels: usize, levels_minus_one: usize },
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    TrainingDiverged { epoch: usize, step: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),

    // ---- config files / CLI ----
    #[error("{path}:{line}: {reason}")]
    ConfigParse { path: PathBuf, line: usize, reason: String },
    #[error("{path}: unknown config key \"{key}\"")]
    UnknownConfigKey { path: PathBuf, key: String },
    #[error("missing reference tag \"{0}\" in contrast set")]
    MissingReferenceTag(String),
    #[error("{0}")]
    InvalidInput(String),
}

impl Error {
    /// True for errors caused by bad user input or files, false for
    /// internal failures. The CLI maps this to exit code 1 vs 2.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::TrainingDiverged { .. })
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
