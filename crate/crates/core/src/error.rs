use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite vector")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("singular system")]
    SingularSystem,

    #[error("degenerate curvature pair")]
    DegenerateCurvature,

    #[error("no anchor update for client {0}")]
    NoAnchor(usize),

    #[error("unknown base model for round {0}")]
    UnknownBaseModel(usize),

    #[error("global log out of order: expected round {expected}, got {actual}")]
    RoundOutOfOrder { expected: usize, actual: usize },

    #[error("fewer clients than groups ({clients} < {groups})")]
    FewerClientsThanGroups { clients: usize, groups: usize },

    #[error("undefined ASR: every test sample already has the target label")]
    UndefinedAsr,

    #[error("undefined relative error: zero reference vector")]
    UndefinedRelativeError,

    #[error("task mismatch: {0}")]
    TaskMismatch(&'static str),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("global model became non-finite at round {round}")]
    Diverged { round: usize },

    #[error("missing trace: {0}")]
    MissingTrace(&'static str),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
