use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{param_count, LayerKind, ModelConfig, ModelError};
use crate::tensor::Matrix;
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams<T> {
    pub query: Matrix<T>,
    pub key: Matrix<T>,
    pub value: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerParams<T> {
    Rgt {
        heads: Vec<HeadParams<T>>,
        output: Matrix<T>,
    },
    Gcn {
        weight: Matrix<T>,
    },
}

/// Every trainable matrix of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgoParams<T> {
    config: ModelConfig,
    layers: Vec<LayerParams<T>>,
    classifier: Matrix<T>,
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
fn xavier<T: Real, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix<T> {
    let bound = Float::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..fan_in * fan_out)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("shape")
}

impl<T: Real> ErgoParams<T> {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        Self::build(config, |rows, cols| xavier(rng, rows, cols))
    }

    /// All-zero parameters with the layout of `config`.
    pub fn zeroed(config: ModelConfig) -> Result<Self, ModelError> {
        Self::build(config, Matrix::zeros)
    }

    fn build(config: ModelConfig, mut make: impl FnMut(usize, usize) -> Matrix<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let d_k = config.d_k();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let (d_in, d_out) = config.layer_dims(l);
            layers.push(match config.layer_kind {
                LayerKind::Rgt => {
                    let mut heads = Vec::with_capacity(config.heads);
                    for _ in 0..config.heads {
                        heads.push(HeadParams {
                            query: make(d_in, d_k),
                            key: make(d_in, d_k),
                            value: make(d_in, d_k),
                        });
                    }
                    LayerParams::Rgt {
                        heads,
                        output: make(config.heads * d_k, d_out),
                    }
                }
                LayerKind::Gcn => LayerParams::Gcn {
                    weight: make(d_in, d_out),
                },
            });
        }
        let classifier = make(config.final_dim() + config.global_dim, 2);
        Ok(Self {
            config,
            layers,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn classifier(&self) -> &Matrix<T> {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut Matrix<T> {
        &mut self.classifier
    }

    /// Names in registry order: `layer{l}.head{c}.w_q|w_k|w_v`,
    /// `layer{l}.w_o`, `layer{l}.w_gcn`, then `classifier.w_p`.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerParams::Rgt { heads, .. } => {
                    for c in 0..heads.len() {
                        for m in ["w_q", "w_k", "w_v"] {
                            names.push(format!("layer{l}.head{c}.{m}"));
                        }
                    }
                    names.push(format!("layer{l}.w_o"));
                }
                LayerParams::Gcn { .. } => names.push(format!("layer{l}.w_gcn")),
            }
        }
        names.push(String::from("classifier.w_p"));
        names
    }

    /// Matrices in the same order as [`names`](Self::names).
    pub fn matrices(&self) -> Vec<&Matrix<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerParams::Rgt { heads, output } => {
                    for h in heads {
                        out.extend([&h.query, &h.key, &h.value]);
                    }
                    out.push(output);
                }
                LayerParams::Gcn { weight } => out.push(weight),
            }
        }
        out.push(&self.classifier);
        out
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerParams::Rgt { heads, output } => {
                    for h in heads {
                        out.extend([&mut h.query, &mut h.key, &mut h.value]);
                    }
                    out.push(output);
                }
                LayerParams::Gcn { weight } => out.push(weight),
            }
        }
        out.push(&mut self.classifier);
        out
    }

    pub fn named(&self) -> Vec<(String, &Matrix<T>)> {
        self.names().into_iter().zip(self.matrices()).collect()
    }

    /// Trainable scalars actually stored.
    pub fn scalar_count(&self, include_classifier: bool) -> usize {
        let all: usize = self.matrices().iter().map(|m| m.len()).sum();
        if include_classifier {
            all
        } else {
            all - self.classifier.len()
        }
    }

    /// Rebuilds parameters from named matrices, checking every shape.
    pub fn from_named(config: ModelConfig, mut named: BTreeMap<String, Matrix<T>>) -> Result<Self, ModelError> {
        let mut template = Self::zeroed(config)?;
        let names = template.names();
        for (name, slot) in names.iter().zip(template.matrices_mut()) {
            let m = named.remove(name).ok_or_else(|| ModelError::BadParameter {
                name: name.clone(),
                reason: "missing".into(),
            })?;
            if m.shape() != slot.shape() {
                return Err(ModelError::BadParameter {
                    name: name.clone(),
                    reason: format!("shape {:?}, expected {:?}", m.shape(), slot.shape()),
                });
            }
            if !m.all_finite() {
                return Err(ModelError::BadParameter {
                    name: name.clone(),
                    reason: "non-finite value".into(),
                });
            }
            *slot = m;
        }
        if let Some(extra) = named.keys().next() {
            return Err(ModelError::BadParameter {
                name: extra.clone(),
                reason: "unexpected parameter".into(),
            });
        }
        debug_assert_eq!(template.scalar_count(false), param_count(&template.config, false).exact);
        Ok(template)
    }

    pub fn cast<U: Real>(&self) -> ErgoParams<U> {
        let named = self.named().into_iter().map(|(n, m)| (n, m.cast::<U>())).collect();
        ErgoParams::from_named(self.config.clone(), named).expect("same layout")
    }
}
