use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("integrity error in utterance `{utterance}` ({}): {reason}", path.display())]
    Integrity {
        utterance: String,
        path: PathBuf,
        reason: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("input too short: {0}")]
    InputTooShort(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("missing prerequisite `{artifact}`; run stage `{stage}` first")]
    Prerequisite { artifact: String, stage: String },
    #[error(transparent)]
    Autodiff(#[from] seau_autodiff::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 usage/configuration, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Prerequisite { .. } => 1,
            Error::Autodiff(seau_autodiff::Error::NonFinite { .. }) => 3,
            Error::Domain(_) => 3,
            _ => 2,
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
