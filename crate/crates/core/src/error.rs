use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("data error at record {index}: {message}")]
    Data { index: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("kinematic structure error: {0}")]
    Structure(String),

    #[error("target unreachable (position residual {position:.3e} m, orientation residual {orientation:.3e} rad)")]
    UnreachableTarget { position: f64, orientation: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("camera pose estimation failed, residual loss {residual:.3e}")]
    PoseEstimationFailed { residual: f64 },

    #[error("planning failed at step {step}: {reason}")]
    PlanningFailed { step: usize, reason: String },

    #[error("object placement infeasible after {attempts} rejections")]
    PlacementInfeasible { attempts: usize },

    #[error("no reachable grasp among {candidates} candidates")]
    NoFeasibleGrasp { candidates: usize },

    #[error("keyframes unreachable by embodiment: {0:?}")]
    Reachability(Vec<ReachabilityFailure>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(String),
}

/// One keyframe that a kinematic chain cannot reach.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityFailure {
    pub keyframe: usize,
    pub position_residual: f64,
    pub orientation_residual: f64,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
