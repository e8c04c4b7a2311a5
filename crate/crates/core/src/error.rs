use thiserror::Error;

/// Errors produced by every stage of the depth pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid depth {0}: depth must be positive and finite")]
    InvalidDepth(f64),
    #[error("point behind source camera (z = {z:e})")]
    BehindCamera { z: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pixel ({x}, {y}) outside {width}x{height} grid")]
    Index {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("triangulated depth {0:e} is not positive")]
    NegativeDepth(f64),
    #[error("no valid result: {0}")]
    EmptyResult(String),
    #[error("no pixel is valid in both prediction and ground truth")]
    EmptyMask,
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
