//! The network: pair-node initialization, a stack of relational graph
//! transformer (or GCN) layers, and a two-way classifier that also sees the
//! document's global vector.

mod forward;
mod params;

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

pub use forward::{
    classify_pairs, gcn_layer, gcn_normalized, init_node_embeddings, rgt_layer, AttentionEntry, ForwardPass,
    HeadHandles,
};
pub use params::{ErgoParams, HeadParams, LayerParams};

use crate::encoding::EncodingError;
use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("no embedding for event {0}")]
    MissingEmbedding(String),
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("node {0} has an empty neighborhood")]
    EmptyNeighborhood(usize),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{what} {index} out of range ({len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("parameter {name}: {reason}")]
    BadParameter { name: String, reason: String },
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    #[default]
    Rgt,
    Gcn,
}

impl LayerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rgt" => Some(LayerKind::Rgt),
            "gcn" => Some(LayerKind::Gcn),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Rgt => "rgt",
            LayerKind::Gcn => "gcn",
        }
    }
}

/// Shape and regularization of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the initial node vectors, twice the event embedding size.
    pub input_dim: usize,
    /// Width of the global document vector fed to the classifier.
    pub global_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Output width of every layer.
    pub hidden_dim: usize,
    /// Per-head width; defaults to `hidden_dim / heads`.
    #[serde(default)]
    pub head_dim: Option<usize>,
    pub dropout: f64,
    #[serde(default)]
    pub layer_kind: LayerKind,
}

impl ModelConfig {
    /// Two RGT layers with four heads and dropout 0.2 over `embedding_dim`
    /// sized event vectors.
    pub fn for_embedding_dim(embedding_dim: usize) -> Self {
        Self {
            input_dim: 2 * embedding_dim,
            global_dim: embedding_dim,
            layers: 2,
            heads: 4,
            hidden_dim: embedding_dim,
            head_dim: None,
            dropout: 0.2,
            layer_kind: LayerKind::Rgt,
        }
    }

    pub fn d_k(&self) -> usize {
        self.head_dim.unwrap_or(self.hidden_dim / self.heads.max(1))
    }

    /// `(d_in, d_out)` of layer `l`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        let d_in = if l == 0 { self.input_dim } else { self.hidden_dim };
        (d_in, self.hidden_dim)
    }

    /// Width of the node vectors reaching the classifier.
    pub fn final_dim(&self) -> usize {
        if self.layers == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.input_dim == 0 || self.global_dim == 0 {
            return bad(format!(
                "input_dim {} and global_dim {} must be positive",
                self.input_dim, self.global_dim
            ));
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.layers == 0 {
            return Ok(());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if self.layer_kind == LayerKind::Rgt {
            if self.heads == 0 {
                return bad("heads must be at least 1".into());
            }
            if self.head_dim.is_none() && !self.hidden_dim.is_multiple_of(self.heads) {
                return bad(format!(
                    "hidden_dim {} is not divisible by {} heads; set head_dim",
                    self.hidden_dim, self.heads
                ));
            }
            if self.d_k() == 0 {
                return bad("head_dim must be positive".into());
            }
        }
        Ok(())
    }
}

/// Growth class of the parameter count of a graph layer family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComplexityClass {
    /// `O(L H D^2)`
    LayersHeadsDimSq,
    /// `O(L H D^2 + L D)`
    LayersHeadsDimSqPlusLayersDim,
    /// `O(L D^2)`
    LayersDimSq,
}

impl ComplexityClass {
    pub fn notation(self) -> &'static str {
        match self {
            ComplexityClass::LayersHeadsDimSq => "O(LHD^2)",
            ComplexityClass::LayersHeadsDimSqPlusLayersDim => "O(LHD^2+LD)",
            ComplexityClass::LayersDimSq => "O(LD^2)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub exact: usize,
    pub class: ComplexityClass,
}

/// Number of stored scalars in the graph layers, plus the classifier when
/// `include_classifier` is set.
///
/// An RGT layer holds `3 * C` projections of `d_in x d_k` and one
/// `(C * d_k) x d_out` output matrix; a GCN layer one `d_in x d_out` matrix.
pub fn param_count(config: &ModelConfig, include_classifier: bool) -> ParamCount {
    let mut exact = 0;
    for l in 0..config.layers {
        let (d_in, d_out) = config.layer_dims(l);
        exact += match config.layer_kind {
            LayerKind::Rgt => 3 * config.heads * d_in * config.d_k() + config.heads * config.d_k() * d_out,
            LayerKind::Gcn => d_in * d_out,
        };
    }
    if include_classifier {
        exact += (config.final_dim() + config.global_dim) * 2;
    }
    let class = match config.layer_kind {
        LayerKind::Rgt => ComplexityClass::LayersHeadsDimSq,
        LayerKind::Gcn => ComplexityClass::LayersDimSq,
    };
    ParamCount { exact, class }
}

/// Parameter count of a multi-head GAT stack (a `d_in x d_k` projection and
/// a `2 * d_k` attention vector per head, one `d_out` bias per layer), used
/// only for comparison tables.
pub fn gat_param_count(layers: usize, heads: usize, d_in: usize, d_k: usize, d_out: usize) -> ParamCount {
    let per_layer = heads * (d_in * d_k + 2 * d_k) + d_out;
    ParamCount {
        exact: layers * per_layer,
        class: ComplexityClass::LayersHeadsDimSqPlusLayersDim,
    }
}

#[cfg(test)]
mod tests;
