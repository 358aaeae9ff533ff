use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum PblError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite_epoch:?})")]
    Divergence {
        epoch: usize,
        last_finite_epoch: Option<usize>,
    },

    #[error("fit failed at stage {stage}")]
    StageFit {
        stage: usize,
        #[source]
        source: Box<PblError>,
    },

    #[error("missing propensities: {0}")]
    MissingPropensities(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PblError>;

pub(crate) fn shape_err(what: impl Into<String>) -> PblError {
    PblError::Shape(what.into())
}

pub(crate) fn domain_err(what: impl Into<String>) -> PblError {
    PblError::Domain(what.into())
}
