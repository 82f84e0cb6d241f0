use std::path::PathBuf;

use ergo_core::corpus::CorpusError;
use ergo_core::encoding::EncodingError;
use ergo_core::model::ModelError;
use ergo_core::relgraph::GraphError;
use ergo_core::training::TrainError;
use serde::Serialize;

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::corpus_io::CorpusLoadError;
use crate::interchange::InterchangeError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusLoadError),
    #[error(transparent)]
    Split(#[from] CorpusError),
    #[error(transparent)]
    Interchange(#[from] InterchangeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
}

/// Broad failure classes, each with its own exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

fn model_kind(e: &ModelError) -> ErrorKind {
    match e {
        ModelError::InvalidConfig(_) | ModelError::OutOfRange { .. } => ErrorKind::Config,
        ModelError::Tensor(_) => ErrorKind::Numeric,
        _ => ErrorKind::Data,
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Usage(_) => ErrorKind::Config,
            Error::Model(e) => model_kind(e),
            Error::Train(e) => match e {
                TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient { .. } | TrainError::Tensor(_) => {
                    ErrorKind::Numeric
                }
                TrainError::InvalidConfig(_) | TrainError::MissingDev => ErrorKind::Config,
                TrainError::Model(m) => model_kind(m),
                TrainError::Encoding(EncodingError::InvalidPlan(_)) => ErrorKind::Config,
                _ => ErrorKind::Data,
            },
            _ => ErrorKind::Data,
        }
    }

    /// One-line JSON suitable for stderr.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: ErrorKind,
            code: i32,
            message: &'a str,
        }
        let message = self.to_string();
        let kind = self.kind();
        serde_json::to_string(&Line {
            error: kind,
            code: kind.exit_code(),
            message: &message,
        })
        .expect("error line serializes")
    }
}

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
