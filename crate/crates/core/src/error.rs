use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RedError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid architecture at stage {stage}: {detail}")]
    Architecture { stage: usize, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<RedError>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = RedError> = std::result::Result<T, E>;

impl RedError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        RedError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        RedError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
