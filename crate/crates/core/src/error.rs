use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{0} did not converge")]
    NonConvergence(&'static str),

    #[error("matrix exponential overflowed")]
    Overflow,

    #[error("vector length {0} is not d(d+1)/2 for any d")]
    BadLength(usize),

    #[error("image {width}x{height} is too small (need at least {min_width}x{min_height})")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },

    #[error("region {0} is out of bounds")]
    RegionOutOfBounds(String),

    #[error("region {0} has fewer than 9 pixels")]
    RegionTooSmall(String),

    #[error("region covariance is degenerate (zero trace with eps = 0)")]
    DegenerateRegion,

    #[error("k = {k} exceeds the number of points ({points})")]
    KTooLarge { k: usize, points: usize },

    #[error("need at least {needed} positive samples, got {got}")]
    TooFewPositives { needed: usize, got: usize },

    #[error("weighted least-squares system is singular")]
    SingularSystem,

    #[error("training set contains only one class")]
    OneClassOnly,

    #[error("negative mining produced {got} of {needed} windows")]
    InsufficientNegatives { got: usize, needed: usize },

    #[error(
        "window source {width}x{height} is smaller than the model window {window_w}x{window_h}"
    )]
    WindowTooSmall {
        width: usize,
        height: usize,
        window_w: usize,
        window_h: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown tangent mapping '{0}'")]
    UnknownMapping(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unsupported model schema version {0}")]
    SchemaVersion(u32),

    #[error("image decode error: {0}")]
    Image(#[from] image::ImageError),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code, used as the prefix of CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotSymmetric { .. } => "E_NOT_SYMMETRIC",
            Error::NotPositiveDefinite => "E_NOT_SPD",
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::NonConvergence(_) => "E_NONCONVERGENCE",
            Error::Overflow => "E_OVERFLOW",
            Error::BadLength(_) => "E_BAD_LENGTH",
            Error::ImageTooSmall { .. } => "E_IMAGE_TOO_SMALL",
            Error::RegionOutOfBounds(_) => "E_REGION_BOUNDS",
            Error::RegionTooSmall(_) => "E_REGION_SIZE",
            Error::DegenerateRegion => "E_DEGENERATE_REGION",
            Error::KTooLarge { .. } => "E_K_TOO_LARGE",
            Error::TooFewPositives { .. } => "E_TOO_FEW_POSITIVES",
            Error::SingularSystem => "E_SINGULAR",
            Error::OneClassOnly => "E_ONE_CLASS",
            Error::InsufficientNegatives { .. } => "E_INSUFFICIENT_NEGATIVES",
            Error::WindowTooSmall { .. } => "E_WINDOW_TOO_SMALL",
            Error::EmptyInput(_) => "E_EMPTY_INPUT",
            Error::InvalidArgument(_) => "E_INVALID_ARGUMENT",
            Error::UnknownMapping(_) => "E_UNKNOWN_MAPPING",
            Error::Parse { .. } => "E_PARSE",
            Error::MissingFile(_) => "E_MISSING_FILE",
            Error::SchemaVersion(_) => "E_SCHEMA_VERSION",
            Error::Image(_) => "E_IMAGE",
            Error::Json(_) => "E_MODEL_FORMAT",
            Error::Io(_) => "E_IO",
        }
    }
}
