use crate::scene::PoseSE3;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants carry enough context to act on the failure;
/// recoverable conditions (tracking divergence) keep the data needed to continue.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("projection domain: gaussian center at or behind the near plane (z = {z:.6})")]
    ProjectionDomain { z: f64 },

    #[error("compositing cache does not match the given map/pose/intrinsics")]
    InconsistentCache,

    #[error("overlap undefined: frame has no valid depth pixels")]
    UndefinedOverlap,

    #[error("image dimensions differ ({a_w}x{a_h} vs {b_w}x{b_h})")]
    DimensionMismatch {
        a_w: u32,
        a_h: u32,
        b_w: u32,
        b_h: u32,
    },

    #[error("loss undefined over an empty set: {0}")]
    UndefinedLoss(String),

    #[error("insufficient visibility: no pixel passes the silhouette gate")]
    InsufficientVisibility,

    #[error("tracking diverged (non-finite loss); initial pose returned alongside")]
    TrackingFailure { init_pose: Box<PoseSE3> },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("encoded index {index} out of range for codebook with {count} codes")]
    InvalidIndex { index: usize, count: usize },

    #[error("covariance is not symmetric positive definite")]
    InvalidCovariance,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dataset format error in {path}: {reason}")]
    DatasetFormat { path: String, reason: String },

    #[error("dataset contains no usable frames")]
    EmptyDataset,

    #[error("corrupt checkpoint ({section})")]
    CorruptCheckpoint { section: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("map initialization failed: {0}")]
    InitializationFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(String),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
