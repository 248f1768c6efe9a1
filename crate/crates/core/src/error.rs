use std::path::PathBuf;

use crate::signal::Lead;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the toolkit.
///
/// Variants split into two families: input/output problems (unreadable or
/// malformed files) and domain problems (valid input that violates a
/// numerical precondition). [`Error::is_io`] tells them apart.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown lead name `{0}`")]
    UnknownLead(String),

    #[error("crop window out of bounds on the {side} side: {detail}")]
    OutOfBounds { side: &'static str, detail: String },

    #[error("insufficient beats: found {found} R-peaks, need at least {needed}")]
    InsufficientBeats { found: usize, needed: usize },

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("degenerate alignment fit: {0}")]
    DegenerateFit(String),

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing registry entry for class `{class}`, lead {lead}")]
    MissingEntry { class: String, lead: Lead },

    #[error("correlation undefined: lead {0} is constant")]
    UndefinedCorrelation(Lead),

    #[error("step index {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("denoiser contract violated: {0}")]
    Contract(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// True for file-system and file-format failures, false for domain errors.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Parse { .. })
    }
}
