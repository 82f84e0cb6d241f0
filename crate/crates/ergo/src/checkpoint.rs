//! Versioned JSON checkpoints holding the model configuration, how inputs
//! were built, and every parameter matrix by name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ergo_core::model::{ErgoParams, ModelConfig, ModelError};
use ergo_core::tensor::Matrix;
use ergo_core::training::GraphOptions;
use ergo_core::Real;
use serde::{Deserialize, Serialize};

use crate::config::EmbeddingSpec;

pub const FORMAT: &str = "ergo-checkpoint";
pub const VERSION: u32 = 1;
pub const FILE_NAME: &str = "best.ckpt";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{path}: unsupported checkpoint version {found}")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: {source}")]
    Params { path: PathBuf, source: ModelError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Numeric profile the parameters were trained in.
    pub profile: String,
    pub model: ModelConfig,
    pub graph: GraphOptions,
    pub embeddings: EmbeddingSpec,
    pub best_epoch: usize,
    pub params: BTreeMap<String, Matrix<f64>>,
}

impl Checkpoint {
    pub fn new<T: Real>(
        params: &ErgoParams<T>,
        graph: GraphOptions,
        embeddings: EmbeddingSpec,
        best_epoch: usize,
    ) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            profile: T::PROFILE.into(),
            model: params.config().clone(),
            graph,
            embeddings,
            best_epoch,
            params: params.named().into_iter().map(|(n, m)| (n, m.cast())).collect(),
        }
    }

    pub fn params<T: Real>(&self) -> Result<ErgoParams<T>, ModelError> {
        let named = self.params.iter().map(|(n, m)| (n.clone(), m.cast())).collect();
        ErgoParams::from_named(self.model.clone(), named)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, text).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| CheckpointError::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if ckpt.format != FORMAT {
            return Err(CheckpointError::Malformed {
                path: path.to_path_buf(),
                reason: format!("not a checkpoint (format {:?})", ckpt.format),
            });
        }
        if ckpt.version != VERSION {
            return Err(CheckpointError::Version {
                path: path.to_path_buf(),
                found: ckpt.version,
            });
        }
        ckpt.params::<f64>().map_err(|source| CheckpointError::Params {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(ckpt)
    }
}
