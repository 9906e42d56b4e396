use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box [{x}, {y}, {w}, {h}]: width and height must be finite and positive")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },

    #[error("{name} = {value} is outside its allowed domain {domain}")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mask is for frame '{mask}' but the box belongs to frame '{expected}'")]
    FrameMismatch { expected: String, mask: String },

    #[error("mask raster has {actual} pixels, expected {width}x{height}")]
    MaskDimensions {
        width: usize,
        height: usize,
        actual: usize,
    },

    #[error("visible box does not overlap its full box")]
    DisjointVisibleBox,

    #[error("classifier '{classifier}' has more than one verdict for candidate '{candidate}'")]
    DuplicateVerdict { classifier: String, candidate: String },

    #[error("verdict for candidate '{verdict}' passed while fusing candidate '{candidate}'")]
    VerdictCandidateMismatch { candidate: String, verdict: String },

    #[error("classifier '{classifier}' has no verdict for candidate '{candidate}'")]
    MissingVerdict { classifier: String, candidate: String },

    #[error("no evaluated ground truth under setting '{0}'; miss rate is undefined")]
    NoEvaluatedGroundTruth(String),

    #[error("no frames to process")]
    NoFrames,

    #[error("unknown evaluation setting '{0}'")]
    UnknownSetting(String),

    #[error("cannot place {requested} non-overlapping pedestrians in a {width}x{height} image")]
    InfeasiblePlacement {
        requested: usize,
        width: u32,
        height: u32,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: I/O error")]
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
