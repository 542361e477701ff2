use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate triangle (area {area:e})")]
    DegenerateTriangle { area: f64 },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("pose has {got} joints but the skeleton has {expected}")]
    JointCountMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("need at least {needed} Gaussians, got {got}")]
    TooFewGaussians { needed: usize, got: usize },
    #[error("loss term `{0}` is required for this stage but missing")]
    MissingTerm(&'static str),
    #[error("non-finite gradient in parameter group `{0}`")]
    NonFiniteGradient(String),
    #[error("schedule step {step} outside 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("unsupported subdivision level {0} (expected 1 or 4)")]
    UnsupportedSubdivision(usize),
    #[error("frames are missing silhouette masks")]
    MissingSilhouettes,
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}
