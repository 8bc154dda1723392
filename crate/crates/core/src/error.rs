use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sigma ({0}); must be > 0")]
    InvalidSigma(f64),
    #[error("invalid decode window {0}; must be odd and >= 1")]
    InvalidWindow(usize),
    #[error("heatmap has no positive mass around its maximum")]
    EmptyHeatmap,
    #[error("heatmap contains non-finite values")]
    NonFiniteHeatmap,

    #[error("image is {height}x{width}; height must not exceed width")]
    NotLandscape { height: usize, width: usize },
    #[error("invalid pixel spacing ({x}, {y}); must be > 0")]
    InvalidSpacing { x: f64, y: f64 },
    #[error("empty image")]
    EmptyImage,
    #[error("pixel intensity {value} at ({x}, {y}) outside [0, 1]")]
    IntensityOutOfRange { x: usize, y: usize, value: f32 },

    #[error("invalid landmark schema: {0}")]
    InvalidSchema(String),
    #[error("missing landmark {0}")]
    MissingLandmark(String),
    #[error("landmark {0} is not part of the schema")]
    UnknownLandmark(String),
    #[error("landmark {name} at ({x}, {y}) outside the {width}x{height} image")]
    LandmarkOutOfBounds {
        name: String,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("landmark {0} has non-finite coordinates")]
    NonFinitePoint(String),
    #[error("landmarks coincide; angle undefined")]
    DegenerateLandmarks,

    #[error("point ({x}, {y}) lies outside the crop")]
    OutOfCrop { x: f64, y: f64 },
    #[error("patch of size {size} does not fit a {width}x{height} image")]
    PatchTooLarge {
        size: usize,
        width: usize,
        height: usize,
    },

    #[error("invalid stage spec: {0}")]
    InvalidSpec(String),
    #[error("missing prediction file {}", .0.display())]
    MissingPrediction(PathBuf),
    #[error("prediction does not match stage: {0}")]
    FormatMismatch(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("unsupported file version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("phantom geometry does not fit: {0}")]
    GeometryOverflow(String),
    #[error("invalid class mix: {0}")]
    InvalidMix(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} distinct patients, got {got}")]
    TooFewPatients { needed: usize, got: usize },
    #[error("nothing to evaluate: {0}")]
    EmptyInput(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for failures that indicate a bug rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Internal(_))
    }
}
