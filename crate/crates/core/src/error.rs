use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {msg}")]
    ImageDecode { path: PathBuf, msg: String },

    #[error("cannot encode image: {0}")]
    ImageEncode(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image is {width}x{height}, smaller than the {size}x{size} crop")]
    ImageTooSmall { width: u32, height: u32, size: u32 },

    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("unknown augmentation preset `{0}`")]
    UnknownPreset(String),

    #[error("pretrained weights for `{0}` are not available (set CNNDETECT_PRETRAINED to a checkpoint file)")]
    PretrainedUnavailable(String),

    #[error("average precision is undefined: labels contain a single class")]
    SingleClass,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("degenerate calibration pair: {0}")]
    DegenerateCalibration(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure while doing work. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::InvalidArgument(_)
            | Error::UnknownArchitecture(_)
            | Error::UnknownPreset(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
