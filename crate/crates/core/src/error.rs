use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A stage value became non-finite or exceeded the blowup threshold.
    #[error("integration blowup at step {step:?}, stage {stage}")]
    Blowup { step: Option<usize>, stage: usize },

    /// Rollout of one training sample blew up.
    #[error("rollout blowup in sample {sample}: {source}")]
    SampleBlowup {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("incompatible time grids: {0}")]
    TimeGrid(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn is_blowup(&self) -> bool {
        matches!(self, Error::Blowup { .. } | Error::SampleBlowup { .. })
    }

    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            Error::Blowup { stage, .. } => Error::Blowup {
                step: Some(step),
                stage,
            },
            Error::SampleBlowup { sample, source } => Error::SampleBlowup {
                sample,
                source: Box::new(source.at_step(step)),
            },
            other => other,
        }
    }

    /// Shifts the sample index of a per-sample blowup by `offset`.
    pub(crate) fn offset_sample(self, offset: usize) -> Error {
        match self {
            Error::SampleBlowup { sample, source } => Error::SampleBlowup {
                sample: sample + offset,
                source,
            },
            other => other,
        }
    }
}
