use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// One config problem at a key path such as `generation.episodes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl Issue {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Issue>),

    #[error(transparent)]
    Core(#[from] splatgen_core::Error),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("episode {episode} failed after {attempts} attempts; last error: {last}")]
    RetriesExhausted { episode: usize, attempts: usize, last: String },
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command line: 2 for bad configs, 3 for
    /// everything that fails later.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            _ => 3,
        }
    }

    pub fn issues(&self) -> &[Issue] {
        match self {
            PipelineError::Validation(v) => v,
            _ => &[],
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
