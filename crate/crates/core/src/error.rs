use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = StmdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StmdError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("grid of {height}x{width} needs {expected} values, got {actual}")]
    Length {
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("kernel of {taps} taps does not fit a grid dimension of {dimension}")]
    Sizing { taps: usize, dimension: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("frame index {got} is not after the last stored index {last}")]
    Ordering { last: u64, got: u64 },

    #[error("warm-up: delay {delay} needs more than {depth} stored frames")]
    WarmUp { delay: usize, depth: usize },

    #[error(
        "numeric runaway: potential {value} exceeds ceiling {ceiling} \
         (decay_g={decay_g}, inhib_gain={inhib_gain}, excit_gain={excit_gain}, step_dt={step_dt})"
    )]
    Runaway {
        value: f64,
        ceiling: f64,
        decay_g: f64,
        inhib_gain: f64,
        excit_gain: f64,
        step_dt: f64,
    },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("target leaves the frame at frame {frame}: center ({x:.3}, {y:.3})")]
    PathOutOfFrame { frame: usize, x: f64, y: f64 },

    #[error("empty threshold sweep")]
    EmptySweep,

    #[error("no ground-truth instances")]
    NoGroundTruth,

    #[error("no matched detections carry a direction")]
    NoDirectedMatches,

    #[error("frame extents disagree: detections cover {detections}, track covers {track}")]
    FrameCountMismatch { detections: String, track: String },

    #[error("sweep grid of {cells} cells exceeds the budget of {budget}")]
    CellBudget { cells: usize, budget: usize },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StmdError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Self::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
