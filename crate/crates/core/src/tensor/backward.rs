use alloc::vec;
use alloc::vec::Vec;

use super::{Matrix, Op, Tape, Tensor, TensorError};
use crate::Real;

impl<T: Real> Tape<T> {
    /// Propagates d(root)/d(node) to every node that requires a gradient and
    /// adds it to that node's stored gradient.
    pub fn backward(&mut self, root: Tensor) -> Result<(), TensorError> {
        let (rows, cols) = self.shape(root);
        if (rows, cols) != (1, 1) {
            return Err(TensorError::NonScalarRoot { rows, cols });
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }

        let mut adjoints: Vec<Option<Matrix<T>>> = vec![None; root.0 + 1];
        adjoints[root.0] = Some(Matrix::scalar(T::one()));

        for id in (0..=root.0).rev() {
            let Some(upstream) = adjoints[id].take() else {
                continue;
            };
            self.propagate(id, &upstream, &mut adjoints);
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(g) => g.add_assign(&upstream),
                None => node.grad = Some(upstream),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, up: &Matrix<T>, adjoints: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[id];
        let value = |t: Tensor| &self.nodes[t.0].value;
        let wants = |t: Tensor| self.nodes[t.0].requires_grad;
        let mut send = |t: Tensor, g: Matrix<T>| {
            if !wants(t) {
                return;
            }
            match &mut adjoints[t.0] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    send(*a, up.matmul(&value(*b).transpose()));
                }
                if wants(*b) {
                    send(*b, value(*a).transpose().matmul(up));
                }
            }
            Op::Transpose(a) => send(*a, up.transpose()),
            Op::Add(a, b) => {
                send(*a, up.clone());
                send(*b, up.clone());
            }
            Op::Sub(a, b) => {
                send(*a, up.clone());
                send(*b, up.map(|g| -g));
            }
            Op::Mul(a, b) => {
                send(*a, zip(up, value(*b), |g, y| g * y));
                send(*b, zip(up, value(*a), |g, x| g * x));
            }
            Op::Scale(a, c) => {
                let c = *c;
                send(*a, up.map(|g| g * c));
            }
            Op::AddScalar(a) => send(*a, up.clone()),
            Op::Ln(a) => send(*a, zip(up, value(*a), |g, x| g / x)),
            Op::Powf(a, p) => {
                let p = *p;
                send(
                    *a,
                    zip(up, value(*a), |g, x| {
                        if p == T::zero() || (x == T::zero() && p < T::one()) {
                            T::zero()
                        } else {
                            g * p * x.powf(p - T::one())
                        }
                    }),
                );
            }
            Op::ClampMin(a, floor) => {
                let floor = *floor;
                send(*a, zip(up, value(*a), |g, x| if x < floor { T::zero() } else { g }));
            }
            Op::Relu(a) => send(*a, zip(up, value(*a), |g, x| if x > T::zero() { g } else { T::zero() })),
            Op::ConcatCols(a, b) => {
                let left = value(*a).cols();
                let right = value(*b).cols();
                let mut ga = Matrix::zeros(up.rows(), left);
                let mut gb = Matrix::zeros(up.rows(), right);
                for r in 0..up.rows() {
                    let row = up.row(r);
                    ga.row_mut(r).copy_from_slice(&row[..left]);
                    gb.row_mut(r).copy_from_slice(&row[left..]);
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::ConcatRows(a, b) => {
                let top = value(*a).len();
                let ga = Matrix::from_vec(value(*a).rows(), up.cols(), up.as_slice()[..top].to_vec());
                let gb = Matrix::from_vec(value(*b).rows(), up.cols(), up.as_slice()[top..].to_vec());
                send(*a, ga.expect("shape"));
                send(*b, gb.expect("shape"));
            }
            Op::GatherRows(a, indices) => {
                let src = value(*a);
                let mut g = Matrix::zeros(src.rows(), src.cols());
                for (r, &i) in indices.iter().enumerate() {
                    for (d, &x) in g.row_mut(i).iter_mut().zip(up.row(r)) {
                        *d = *d + x;
                    }
                }
                send(*a, g);
            }
            Op::SegmentSum(a, offsets) => {
                let src = value(*a);
                let mut g = Matrix::zeros(src.rows(), src.cols());
                for s in 0..offsets.len() - 1 {
                    for r in offsets[s]..offsets[s + 1] {
                        g.row_mut(r).copy_from_slice(up.row(s));
                    }
                }
                send(*a, g);
            }
            Op::RowDot(a, b) => {
                let (va, vb) = (value(*a), value(*b));
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                for r in 0..va.rows() {
                    let g = up.as_slice()[r];
                    for (d, &y) in ga.row_mut(r).iter_mut().zip(vb.row(r)) {
                        *d = g * y;
                    }
                    for (d, &x) in gb.row_mut(r).iter_mut().zip(va.row(r)) {
                        *d = g * x;
                    }
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::ScaleRows(a, w) => {
                let (va, vw) = (value(*a), value(*w));
                let mut ga = up.clone();
                let mut gw = Matrix::zeros(vw.rows(), 1);
                for r in 0..va.rows() {
                    let weight = vw.as_slice()[r];
                    let mut dot = T::zero();
                    for (d, &x) in ga.row_mut(r).iter_mut().zip(va.row(r)) {
                        dot = dot + *d * x;
                        *d = *d * weight;
                    }
                    gw.as_mut_slice()[r] = dot;
                }
                send(*a, ga);
                send(*w, gw);
            }
            Op::Sum(a) => {
                let (r, c) = value(*a).shape();
                send(*a, Matrix::filled(r, c, up.as_slice()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = value(*a).shape();
                let g = up.as_slice()[0] / T::of_usize(r * c);
                send(*a, Matrix::filled(r, c, g));
            }
            Op::SumCols(a) => {
                let (rows, cols) = value(*a).shape();
                let mut g = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let v = up.as_slice()[r];
                    g.row_mut(r).fill(v);
                }
                send(*a, g);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut g = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    softmax_backward(y.row(r), up.row(r), g.row_mut(r));
                }
                send(*a, g);
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = node.value.as_slice();
                let mut g = Matrix::zeros(y.len(), 1);
                for s in 0..offsets.len() - 1 {
                    let span = offsets[s]..offsets[s + 1];
                    softmax_backward(
                        &y[span.clone()],
                        &up.as_slice()[span.clone()],
                        &mut g.as_mut_slice()[span],
                    );
                }
                send(*a, g);
            }
            Op::Dropout(a, mask) => {
                let data = up.as_slice().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                send(*a, Matrix::from_vec(up.rows(), up.cols(), data).expect("shape"));
            }
        }
    }
}

fn zip<T: Real>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

// dx_k = y_k (dy_k - sum_j y_j dy_j); masked entries have y = 0.
fn softmax_backward<T: Real>(y: &[T], dy: &[T], dx: &mut [T]) {
    let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    for ((d, &yk), &gk) in dx.iter_mut().zip(y).zip(dy) {
        *d = yk * (gk - dot);
    }
}
