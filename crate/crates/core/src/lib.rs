//! Event relational graph engine for document-level event causality
//! identification.
//!
//! Every pair of event mentions in a document becomes a node of a
//! relational graph. Nodes that share an event are connected, a stack of
//! relational graph transformer layers propagates information along those
//! edges, and each node is classified as causal or not. Training uses an
//! alpha-balanced focal loss to cope with the heavy class imbalance.
//!
//! This crate is `no_std` (it needs `alloc`) and holds everything that is
//! pure computation:
//!
//! - [`tensor`]: a small dense-matrix reverse-mode differentiation engine.
//! - [`corpus`]: documents, event pairs, fold planning and statistics.
//! - [`encoding`]: window planning and marker aggregation for precomputed
//!   token embeddings, plus a deterministic synthetic provider.
//! - [`relgraph`]: the event relational graph.
//! - [`model`]: node initialization, transformer/GCN layers and the pair
//!   classifier.
//! - [`training`]: focal loss, learning-rate schedule, AdamW and the
//!   per-document training loop.
//! - [`evaluation`]: precision/recall/F1, cross-validation, histograms
//!   and attention dumps.
//!
//! File formats, the command line and anything touching the filesystem
//! live in the companion `ergo` crate.
//!
//! All numeric code is generic over [`Real`], implemented for `f32` (the
//! default training profile) and `f64` (used for gradient checks and
//! reproducibility tests).

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod encoding;
pub mod evaluation;
pub mod model;
mod real;
pub mod relgraph;
pub mod tensor;
pub mod training;

pub use real::Real;
