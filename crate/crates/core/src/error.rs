use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GsvsError>;

#[derive(Debug, Error)]
pub enum GsvsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    /// Unfolding system without full column rank; carries the aliased voxel group.
    #[error("ill-conditioned encoding at voxel group {group:?}")]
    IllConditionedEncoding { group: Vec<usize> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("numerical failure in patch {patch}: {reason}")]
    Numerical { patch: usize, reason: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing schedule: {0}")]
    MissingSchedule(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GsvsError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GsvsError::InvalidArgument(msg.into())
    }
}
