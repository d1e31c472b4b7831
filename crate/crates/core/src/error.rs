use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Non-finite input, wrong dimension, or an argument outside the
    /// function's domain (e.g. a steering angle at the tangent singularity).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("value {value} outside [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("interpolation error: {0}")]
    Interpolation(String),

    #[error("prediction diverged at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDivergence { epoch: usize },

    #[error("unknown signal '{id}'; valid ids: {valid}")]
    UnknownSignal { id: String, valid: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Wraps an error with the label of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for failures caused by bad input or configuration rather than
    /// by the numerics. The CLI maps these to a distinct exit code.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::UnknownSignal { .. }
            | Error::Shape(_)
            | Error::Size(_)
            | Error::Io { .. }
            | Error::Json(_) => true,
            _ => false,
        }
    }
}
