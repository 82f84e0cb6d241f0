//! Dense-matrix reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order, so [`Tape::backward`] is a single reverse sweep.
//! [`Tensor`] is a cheap handle into the tape. Leaves are either
//! parameters (gradients are tracked) or constants (they are not).
//!
//! ```
//! use ergo_core::tensor::{Matrix, Tape};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Matrix::row_vector(&[1.0, 2.0, 3.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let root = tape.sum(sq);
//! tape.backward(root).unwrap();
//! assert_eq!(tape.grad(x).unwrap().as_slice(), &[2.0, 4.0, 6.0]);
//! ```
//!
//! Gradients accumulate: calling [`Tape::backward`] twice without
//! [`Tape::zero_grad`] in between adds the second pass on top of the first.
//! A tape is meant to live for one forward/backward pass; build a fresh one
//! per step.

mod backward;
mod clip;
mod matrix;
mod ops;

use alloc::vec::Vec;

pub use clip::{clip_global_norm, global_norm};
pub use matrix::Matrix;

use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("masked softmax: row {row} has every entry masked")]
    AllMasked { row: usize },
    #[error("backward needs a 1x1 root, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("buffer of length {len} cannot hold a {rows}x{cols} matrix")]
    BadBuffer { rows: usize, cols: usize, len: usize },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: &'static str },
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tensor(usize);

impl Tensor {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(Tensor, Tensor),
    Transpose(Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, T),
    AddScalar(Tensor),
    Ln(Tensor),
    Powf(Tensor, T),
    ClampMin(Tensor, T),
    Relu(Tensor),
    ConcatCols(Tensor, Tensor),
    ConcatRows(Tensor, Tensor),
    GatherRows(Tensor, Vec<usize>),
    SegmentSum(Tensor, Vec<usize>),
    RowDot(Tensor, Tensor),
    ScaleRows(Tensor, Tensor),
    Sum(Tensor),
    Mean(Tensor),
    SumCols(Tensor),
    Softmax(Tensor),
    SegmentSoftmax(Tensor, Vec<usize>),
    Dropout(Tensor, Vec<T>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Matrix<T>,
    grad: Option<Matrix<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a differentiation graph. Confined to one thread while in use;
/// the tape itself is `Send`.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Matrix<T>) -> Tensor {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant input.
    pub fn constant(&mut self, value: Matrix<T>) -> Tensor {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, t: Tensor) -> &Matrix<T> {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        self.nodes[t.0].value.shape()
    }

    /// Value of a 1x1 tensor.
    pub fn scalar(&self, t: Tensor) -> T {
        self.nodes[t.0].value.as_slice()[0]
    }

    /// Accumulated gradient, `None` until a backward pass reached `t`.
    pub fn grad(&self, t: Tensor) -> Option<&Matrix<T>> {
        self.nodes[t.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, t: Tensor) -> Option<Matrix<T>> {
        self.nodes[t.0].grad.take()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Tensor {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Tensor(self.nodes.len() - 1)
    }
}
