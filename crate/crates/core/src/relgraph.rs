//! Event relational graph: one node per event pair.
//!
//! Under [`GraphStrategy::SharedEvent`] two nodes are adjacent iff their
//! pairs have an event in common, so a chain `(a, b), (b, c)` is always
//! connected. [`GraphStrategy::Complete`] connects every pair of nodes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{enumerate_pairs, Document, EventPair};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("document {doc_id} has {events} event(s); a graph needs at least 2 (no pairs)")]
    NoPairs { doc_id: String, events: usize },
    #[error("node {node} out of range for {nodes} nodes")]
    InvalidNode { node: usize, nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphStrategy {
    #[default]
    SharedEvent,
    Complete,
}

impl GraphStrategy {
    pub fn name(self) -> &'static str {
        match self {
            GraphStrategy::SharedEvent => "shared_event",
            GraphStrategy::Complete => "complete",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shared_event" => Some(GraphStrategy::SharedEvent),
            "complete" => Some(GraphStrategy::Complete),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationalGraph {
    doc_id: String,
    nodes: Vec<EventPair>,
    adjacency: Vec<Vec<usize>>,
    strategy: GraphStrategy,
    self_loops: bool,
}

pub fn build_graph(doc: &Document, strategy: GraphStrategy, self_loops: bool) -> Result<RelationalGraph, GraphError> {
    if doc.events.len() < 2 {
        return Err(GraphError::NoPairs {
            doc_id: doc.doc_id.clone(),
            events: doc.events.len(),
        });
    }
    Ok(RelationalGraph::from_pairs(
        doc.doc_id.clone(),
        enumerate_pairs(doc),
        strategy,
        self_loops,
    ))
}

impl RelationalGraph {
    /// Builds the graph over an explicit node list. Node ids are positions
    /// in `nodes`.
    pub fn from_pairs(doc_id: String, nodes: Vec<EventPair>, strategy: GraphStrategy, self_loops: bool) -> Self {
        let n = nodes.len();
        let mut adjacency: Vec<Vec<usize>> = match strategy {
            GraphStrategy::Complete => (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
            GraphStrategy::SharedEvent => {
                let mut containing: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for (i, p) in nodes.iter().enumerate() {
                    containing.entry(p.event_a.as_str()).or_default().push(i);
                    containing.entry(p.event_b.as_str()).or_default().push(i);
                }
                nodes
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let mut nbrs: Vec<usize> = containing[p.event_a.as_str()]
                            .iter()
                            .chain(&containing[p.event_b.as_str()])
                            .copied()
                            .filter(|&j| j != i)
                            .collect();
                        nbrs.sort_unstable();
                        nbrs.dedup();
                        nbrs
                    })
                    .collect()
            }
        };
        if self_loops {
            for (i, nbrs) in adjacency.iter_mut().enumerate() {
                let at = nbrs.partition_point(|&j| j < i);
                nbrs.insert(at, i);
            }
        }
        Self {
            doc_id,
            nodes,
            adjacency,
            strategy,
            self_loops,
        }
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn nodes(&self) -> &[EventPair] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn strategy(&self) -> GraphStrategy {
        self.strategy
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    /// Sorted neighbor ids; includes `node` itself iff self loops are on.
    pub fn neighbors(&self, node: usize) -> Result<&[usize], GraphError> {
        self.adjacency
            .get(node)
            .map(Vec::as_slice)
            .ok_or(GraphError::InvalidNode {
                node,
                nodes: self.nodes.len(),
            })
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Undirected edges `(i, j)` with `i < j`; self loops are not edges.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        let directed: usize = self.adjacency.iter().map(Vec::len).sum();
        let loops = if self.self_loops { self.nodes.len() } else { 0 };
        (directed - loops) / 2
    }

    /// Neighborhoods in compressed form: neighbors of node `i` are
    /// `targets[offsets[i]..offsets[i + 1]]`, and `sources` repeats `i` for
    /// each of them.
    pub fn csr(&self) -> Csr {
        let mut offsets = Vec::with_capacity(self.nodes.len() + 1);
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        offsets.push(0);
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            sources.extend(core::iter::repeat_n(i, nbrs.len()));
            targets.extend_from_slice(nbrs);
            offsets.push(targets.len());
        }
        Csr {
            offsets,
            sources,
            targets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
}
