//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape for {op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("variable does not belong to the active graph")]
    ForeignVar,
    #[error("derivative nesting deeper than one level is not supported")]
    NestingTooDeep,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("idx format error: {0}")]
    IdxFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },
    #[error("{0}")]
    Other(String),
}

impl Error {
    /// Stable machine-readable category tag, used by the CLI error contract.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidShape { .. } => "shape",
            Error::Domain { .. } => "domain",
            Error::NonFinite { .. } | Error::NonFiniteGradient { .. } => "non-finite",
            Error::ForeignVar | Error::NestingTooDeep => "autodiff",
            Error::InvalidSpec(_) | Error::UnknownLayer(_) => "model-spec",
            Error::LabelOutOfRange { .. } => "label",
            Error::InvalidConfig(_) => "config",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Checkpoint(_) => "checkpoint",
            Error::IdxFormat(_) => "idx-format",
            Error::Io(_) => "io",
            Error::Diverged { .. } => "diverged",
            Error::Other(_) => "other",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
