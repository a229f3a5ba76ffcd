use std::path::PathBuf;

use thiserror::Error;

/// Errors produced while ingesting, validating, counting and evaluating streams.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("invalid point ({x}, {y}): coordinates must be finite and non-negative")]
    InvalidPoint { x: f64, y: f64 },

    #[error("invalid image geometry {width}x{height}: both sides must be positive")]
    InvalidGeometry { width: f64, height: f64 },

    #[error("score {0} is outside [0, 1]")]
    InvalidScore(f64),

    #[error("unknown class label {0:?} (expected \"open\" or \"closed\")")]
    UnknownClass(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("lost-recovery gap {0} is below the minimum of 2 frames")]
    InvalidGap(u32),

    #[error("frame {frame}: {field}: {message}")]
    Frame {
        frame: u64,
        field: &'static str,
        message: String,
    },

    #[error("frame {frame}: {field}: {source}")]
    AtFrame {
        frame: u64,
        field: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("frame {frame} is out of order (previous frame was {previous})")]
    FrameOrder { frame: u64, previous: u64 },

    #[error("frame sequences are misaligned at position {position}: detections frame {detections}, ground truth frame {truth}")]
    FrameMismatch {
        position: usize,
        detections: u64,
        truth: u64,
    },

    #[error("unsupported format header {found:?} (expected {expected:?})")]
    Format { expected: &'static str, found: String },

    #[error("average precision is undefined for a class with no annotations")]
    UndefinedAp,

    #[error("mean average precision of an empty list is undefined")]
    EmptyApList,

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for bad input, 2 for internal invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 2,
            _ => 1,
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidBox { .. } => "invalid-box",
            Error::InvalidPoint { .. } => "invalid-point",
            Error::InvalidGeometry { .. } => "invalid-geometry",
            Error::InvalidScore(_) => "invalid-score",
            Error::UnknownClass(_) => "unknown-class",
            Error::InvalidConfig(_) => "invalid-config",
            Error::InvalidGap(_) => "invalid-gap",
            Error::Frame { .. } => "invalid-frame",
            Error::AtFrame { source, .. } => source.kind(),
            Error::Syntax { .. } => "syntax",
            Error::FrameOrder { .. } => "frame-order",
            Error::FrameMismatch { .. } => "frame-mismatch",
            Error::Format { .. } => "format",
            Error::UndefinedAp => "undefined-ap",
            Error::EmptyApList => "empty-ap-list",
            Error::Invariant(_) => "invariant",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
