use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::{ErgoParams, LayerParams, ModelError};
use crate::encoding::EventEmbeddings;
use crate::relgraph::{Csr, RelationalGraph};
use crate::tensor::{Matrix, Tape, Tensor};
use crate::Real;

/// Row `i` is `[h_a | h_b]` for node `i = (a, b)`.
pub fn init_node_embeddings<T: Real>(
    embeddings: &EventEmbeddings<T>,
    graph: &RelationalGraph,
) -> Result<Matrix<T>, ModelError> {
    let d = embeddings.dim();
    let mut data = Vec::with_capacity(graph.node_count() * 2 * d);
    for pair in graph.nodes() {
        for id in [&pair.event_a, &pair.event_b] {
            let v = embeddings
                .event(id)
                .ok_or_else(|| ModelError::MissingEmbedding(id.clone()))?;
            if v.len() != d {
                return Err(ModelError::DimensionMismatch {
                    what: "event embedding",
                    expected: d,
                    found: v.len(),
                });
            }
            data.extend_from_slice(v);
        }
    }
    Ok(Matrix::from_vec(graph.node_count(), 2 * d, data)?)
}

/// Tape handles of one attention head's projections.
#[derive(Debug, Clone, Copy)]
pub struct HeadHandles {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
}

/// One relational graph transformer layer.
///
/// Per head, node `i` scores each neighbor `j` by
/// `(v_i W_q) . (v_j W_k) / sqrt(d_k)`, softmax-normalizes the scores over
/// its neighborhood and sums `alpha_ij (v_j W_v)`. Head outputs are
/// concatenated and projected by `W_o`. Returns the layer output and each
/// head's attention column, laid out in `csr` edge order.
pub fn rgt_layer<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    input: Tensor,
    csr: &Csr,
    heads: &[HeadHandles],
    output: Tensor,
    dropout: T,
    rng: Option<&mut R>,
) -> Result<(Tensor, Vec<Tensor>), ModelError> {
    if let Some(node) = csr.offsets.windows(2).position(|w| w[0] == w[1]) {
        return Err(ModelError::EmptyNeighborhood(node));
    }
    let mut attention = Vec::with_capacity(heads.len());
    let mut concat: Option<Tensor> = None;
    for h in heads {
        let d_k = tape.shape(h.query).1;
        let q = tape.matmul(input, h.query)?;
        let k = tape.matmul(input, h.key)?;
        let v = tape.matmul(input, h.value)?;
        let q_edges = tape.gather_rows(q, &csr.sources)?;
        let k_edges = tape.gather_rows(k, &csr.targets)?;
        let scores = tape.row_dot(q_edges, k_edges)?;
        let scores = tape.scale(scores, T::one() / T::of_usize(d_k).sqrt());
        let alpha = tape.segment_softmax(scores, &csr.offsets)?;
        let v_edges = tape.gather_rows(v, &csr.targets)?;
        let weighted = tape.scale_rows(v_edges, alpha)?;
        let head_out = tape.segment_sum(weighted, &csr.offsets)?;
        attention.push(alpha);
        concat = Some(match concat {
            None => head_out,
            Some(acc) => tape.concat_cols(acc, head_out)?,
        });
    }
    let concat = concat.ok_or(ModelError::InvalidConfig("an RGT layer needs at least one head".into()))?;
    let out = tape.matmul(concat, output)?;
    let out = tape.dropout(out, dropout, rng)?;
    Ok((out, attention))
}

/// Symmetric-normalized neighborhoods with self loops: edge `(i, j)` of
/// `A + I` gets weight `1 / sqrt(deg_i deg_j)`.
pub fn gcn_normalized(graph: &RelationalGraph) -> (Csr, Vec<f64>) {
    let hoods: Vec<Vec<usize>> = graph
        .adjacency()
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let mut h: Vec<usize> = nbrs.iter().copied().filter(|&j| j != i).collect();
            let at = h.partition_point(|&j| j < i);
            h.insert(at, i);
            h
        })
        .collect();
    let mut csr = Csr {
        offsets: Vec::with_capacity(hoods.len() + 1),
        sources: Vec::new(),
        targets: Vec::new(),
    };
    let mut weights = Vec::new();
    csr.offsets.push(0);
    for (i, h) in hoods.iter().enumerate() {
        for &j in h {
            csr.sources.push(i);
            csr.targets.push(j);
            weights.push(1.0 / Float::sqrt((h.len() * hoods[j].len()) as f64));
        }
        csr.offsets.push(csr.targets.len());
    }
    (csr, weights)
}

/// `ReLU(Â v W)` with `Â` from [`gcn_normalized`].
pub fn gcn_layer<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    input: Tensor,
    graph: &RelationalGraph,
    weight: Tensor,
    dropout: T,
    rng: Option<&mut R>,
) -> Result<Tensor, ModelError> {
    let (csr, norm) = gcn_normalized(graph);
    let norm: Vec<T> = norm.into_iter().map(T::of).collect();
    let norm = tape.constant(Matrix::column_vector(&norm));
    let projected = tape.matmul(input, weight)?;
    let gathered = tape.gather_rows(projected, &csr.targets)?;
    let scaled = tape.scale_rows(gathered, norm)?;
    let summed = tape.segment_sum(scaled, &csr.offsets)?;
    let out = tape.relu(summed);
    Ok(tape.dropout(out, dropout, rng)?)
}

/// Row `i` is `softmax([v_i | global] W_p)`; column 1 is the positive class.
pub fn classify_pairs<T: Real>(
    tape: &mut Tape<T>,
    nodes: Tensor,
    global: Tensor,
    classifier: Tensor,
) -> Result<Tensor, ModelError> {
    let (n, d_node) = tape.shape(nodes);
    let (g_rows, d_global) = tape.shape(global);
    if g_rows != 1 {
        return Err(ModelError::DimensionMismatch {
            what: "global vector rows",
            expected: 1,
            found: g_rows,
        });
    }
    let w_rows = tape.shape(classifier).0;
    if d_node + d_global != w_rows {
        return Err(ModelError::DimensionMismatch {
            what: "classifier input",
            expected: w_rows,
            found: d_node + d_global,
        });
    }
    let broadcast: Vec<usize> = alloc::vec![0; n];
    let global = tape.gather_rows(global, &broadcast)?;
    let joined = tape.concat_cols(nodes, global)?;
    let logits = tape.matmul(joined, classifier)?;
    Ok(tape.row_softmax(logits)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionEntry<T> {
    pub neighbor: usize,
    pub alpha: T,
}

/// Handles produced by [`ErgoParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `N x 2` class probabilities.
    pub probs: Tensor,
    /// Parameter leaves, in [`ErgoParams::names`] order.
    pub params: Vec<Tensor>,
    /// `[layer][head]` attention columns (empty for GCN layers).
    pub attention: Vec<Vec<Tensor>>,
    pub csr: Csr,
}

impl ForwardPass {
    /// Attention weights node `node` gave its neighbors in `layer`/`head`,
    /// in neighbor-id order.
    pub fn attention_of<T: Real>(
        &self,
        tape: &Tape<T>,
        layer: usize,
        head: usize,
        node: usize,
    ) -> Result<Vec<AttentionEntry<T>>, ModelError> {
        let heads = self.attention.get(layer).ok_or(ModelError::OutOfRange {
            what: "layer",
            index: layer,
            len: self.attention.len(),
        })?;
        let alpha = *heads.get(head).ok_or(ModelError::OutOfRange {
            what: "head",
            index: head,
            len: heads.len(),
        })?;
        let nodes = self.csr.offsets.len() - 1;
        if node >= nodes {
            return Err(ModelError::OutOfRange {
                what: "node",
                index: node,
                len: nodes,
            });
        }
        let span = self.csr.offsets[node]..self.csr.offsets[node + 1];
        let values = tape.value(alpha).as_slice();
        Ok(span
            .map(|e| AttentionEntry {
                neighbor: self.csr.targets[e],
                alpha: values[e],
            })
            .collect())
    }
}

impl<T: Real> ErgoParams<T> {
    /// Records the full network on `tape`. `rng` enables train-time dropout;
    /// pass `None` for evaluation.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        graph: &RelationalGraph,
        node_init: &Matrix<T>,
        global: &[T],
        mut rng: Option<&mut R>,
    ) -> Result<ForwardPass, ModelError> {
        let config = self.config();
        if node_init.shape() != (graph.node_count(), config.input_dim) {
            return Err(ModelError::DimensionMismatch {
                what: "node features",
                expected: config.input_dim,
                found: node_init.cols(),
            });
        }
        if global.len() != config.global_dim {
            return Err(ModelError::DimensionMismatch {
                what: "global vector",
                expected: config.global_dim,
                found: global.len(),
            });
        }
        let dropout = T::of(config.dropout);
        let params: Vec<Tensor> = self.matrices().into_iter().map(|m| tape.param(m.clone())).collect();
        let csr = graph.csr();
        let mut h = tape.constant(node_init.clone());
        let mut attention = Vec::new();
        let mut cursor = 0;
        for layer in self.layers() {
            match layer {
                LayerParams::Rgt { heads, .. } => {
                    let handles: Vec<HeadHandles> = (0..heads.len())
                        .map(|c| HeadHandles {
                            query: params[cursor + 3 * c],
                            key: params[cursor + 3 * c + 1],
                            value: params[cursor + 3 * c + 2],
                        })
                        .collect();
                    let output = params[cursor + 3 * heads.len()];
                    cursor += 3 * heads.len() + 1;
                    let (out, alphas) = rgt_layer(tape, h, &csr, &handles, output, dropout, rng.as_deref_mut())?;
                    h = out;
                    attention.push(alphas);
                }
                LayerParams::Gcn { .. } => {
                    h = gcn_layer(tape, h, graph, params[cursor], dropout, rng.as_deref_mut())?;
                    cursor += 1;
                    attention.push(Vec::new());
                }
            }
        }
        let global = tape.constant(Matrix::row_vector(global));
        let probs = classify_pairs(tape, h, global, params[cursor])?;
        Ok(ForwardPass {
            probs,
            params,
            attention,
            csr,
        })
    }

    /// Evaluation-mode class probabilities for every node of `graph`.
    pub fn predict(&self, graph: &RelationalGraph, embeddings: &EventEmbeddings<T>) -> Result<Matrix<T>, ModelError> {
        let node_init = init_node_embeddings(embeddings, graph)?;
        let mut tape = Tape::new();
        let pass = self.forward::<rand_chacha::ChaCha8Rng>(&mut tape, graph, &node_init, &embeddings.global, None)?;
        Ok(tape.value(pass.probs).clone())
    }
}
