use alloc::vec::Vec;

use rand::Rng;

use super::{Matrix, Op, Tape, Tensor, TensorError};
use crate::Real;

type Result<T> = core::result::Result<T, TensorError>;

impl<T: Real> Tape<T> {
    fn record(&mut self, value: Matrix<T>, op: Op<T>, inputs: &[Tensor]) -> Tensor {
        let requires_grad = inputs.iter().any(|&t| self.nodes[t.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Tensor, b: Tensor, op: Op<T>, f: impl Fn(T, T) -> T) -> Tensor {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data).expect("same shape");
        self.record(out, op, &[a, b])
    }

    fn unary(&mut self, a: Tensor, op: Op<T>, f: impl Fn(T) -> T) -> Tensor {
        let out = self.value(a).map(f);
        self.record(out, op, &[a])
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let out = self.value(a).matmul(self.value(b));
        Ok(self.record(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Tensor) -> Tensor {
        let out = self.value(a).transpose();
        self.record(out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Tensor, factor: T) -> Tensor {
        self.unary(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn add_scalar(&mut self, a: Tensor, c: T) -> Tensor {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// Natural logarithm.
    pub fn ln(&mut self, a: Tensor) -> Tensor {
        self.unary(a, Op::Ln(a), |x| x.ln())
    }

    /// Elementwise `x^exponent`. Where the base is 0 and `exponent < 1`
    /// the derivative is taken to be 0.
    pub fn powf(&mut self, a: Tensor, exponent: T) -> Tensor {
        self.unary(a, Op::Powf(a, exponent), |x| x.powf(exponent))
    }

    /// `max(x, floor)`; clamped entries pass no gradient.
    pub fn clamp_min(&mut self, a: Tensor, floor: T) -> Tensor {
        self.unary(a, Op::ClampMin(a, floor), |x| if x < floor { floor } else { x })
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    /// `[a | b]`: places `b` to the right of `a`.
    pub fn concat_cols(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                left: sa,
                right: sb,
            });
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(sa.0 * (sa.1 + sb.1));
        for r in 0..sa.0 {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let out = Matrix::from_vec(sa.0, sa.1 + sb.1, data)?;
        Ok(self.record(out, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Stacks `b` below `a`.
    pub fn concat_rows(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(TensorError::ShapeMismatch {
                op: "concat_rows",
                left: sa,
                right: sb,
            });
        }
        let mut data = Vec::with_capacity((sa.0 + sb.0) * sa.1);
        data.extend_from_slice(self.value(a).as_slice());
        data.extend_from_slice(self.value(b).as_slice());
        let out = Matrix::from_vec(sa.0 + sb.0, sa.1, data)?;
        Ok(self.record(out, Op::ConcatRows(a, b), &[a, b]))
    }

    /// Output row `r` is input row `indices[r]`. Indices may repeat.
    pub fn gather_rows(&mut self, a: Tensor, indices: &[usize]) -> Result<Tensor> {
        let va = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * va.cols());
        for &i in indices {
            if i >= va.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: va.rows(),
                });
            }
            data.extend_from_slice(va.row(i));
        }
        let out = Matrix::from_vec(indices.len(), va.cols(), data)?;
        Ok(self.record(out, Op::GatherRows(a, indices.to_vec()), &[a]))
    }

    /// Sums consecutive row segments: output row `i` is the sum of input rows
    /// `offsets[i]..offsets[i + 1]`.
    pub fn segment_sum(&mut self, a: Tensor, offsets: &[usize]) -> Result<Tensor> {
        let va = self.value(a);
        check_offsets("segment_sum", offsets, va.rows())?;
        let segments = offsets.len() - 1;
        let mut out = Matrix::zeros(segments, va.cols());
        for s in 0..segments {
            let dst = out.row_mut(s);
            for r in offsets[s]..offsets[s + 1] {
                for (d, &x) in dst.iter_mut().zip(va.row(r)) {
                    *d = *d + x;
                }
            }
        }
        Ok(self.record(out, Op::SegmentSum(a, offsets.to_vec()), &[a]))
    }

    /// Row-wise dot product of two equally shaped matrices, giving a column.
    pub fn row_dot(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("row_dot", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = (0..va.rows())
            .map(|r| va.row(r).iter().zip(vb.row(r)).map(|(&x, &y)| x * y).sum())
            .collect();
        let out = Matrix::from_vec(va.rows(), 1, data)?;
        Ok(self.record(out, Op::RowDot(a, b), &[a, b]))
    }

    /// Multiplies row `r` of `a` by the scalar `weights[r]` (an n x 1 column).
    pub fn scale_rows(&mut self, a: Tensor, weights: Tensor) -> Result<Tensor> {
        let (sa, sw) = (self.shape(a), self.shape(weights));
        if sw != (sa.0, 1) {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                left: sa,
                right: sw,
            });
        }
        let (va, vw) = (self.value(a), self.value(weights));
        let mut out = va.clone();
        for r in 0..sa.0 {
            let w = vw.as_slice()[r];
            for x in out.row_mut(r) {
                *x = *x * w;
            }
        }
        Ok(self.record(out, Op::ScaleRows(a, weights), &[a, weights]))
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let total = self.value(a).as_slice().iter().copied().sum();
        self.record(Matrix::scalar(total), Op::Sum(a), &[a])
    }

    /// Mean of all entries, as a 1x1 tensor.
    pub fn mean(&mut self, a: Tensor) -> Result<Tensor> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "mean",
                reason: "empty tensor",
            });
        }
        let total: T = va.as_slice().iter().copied().sum();
        let mean = total / T::of_usize(va.len());
        Ok(self.record(Matrix::scalar(mean), Op::Mean(a), &[a]))
    }

    /// Per-row sum, giving an n x 1 column.
    pub fn sum_cols(&mut self, a: Tensor) -> Tensor {
        let va = self.value(a);
        let data = (0..va.rows()).map(|r| va.row(r).iter().copied().sum()).collect();
        let out = Matrix::from_vec(va.rows(), 1, data).expect("column");
        self.record(out, Op::SumCols(a), &[a])
    }

    /// Row-wise softmax.
    pub fn row_softmax(&mut self, a: Tensor) -> Result<Tensor> {
        self.masked_row_softmax(a, None)
    }

    /// Row-wise softmax over the entries where `mask` is true. Masked
    /// entries come out as exactly 0. `mask` is row-major with the shape of
    /// `a`; `None` keeps every entry.
    pub fn masked_row_softmax(&mut self, a: Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        let va = self.value(a);
        if let Some(m) = mask {
            if m.len() != va.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "masked_row_softmax",
                    left: va.shape(),
                    right: (m.len(), 1),
                });
            }
        }
        let cols = va.cols();
        let mut out = Matrix::zeros(va.rows(), cols);
        for r in 0..va.rows() {
            let keep = |c: usize| mask.is_none_or(|m| m[r * cols + c]);
            softmax_into(va.row(r), keep, out.row_mut(r)).ok_or(TensorError::AllMasked { row: r })?;
        }
        Ok(self.record(out, Op::Softmax(a), &[a]))
    }

    /// Softmax of an n x 1 column taken independently over each segment
    /// `offsets[i]..offsets[i + 1]`. Every segment must be non-empty.
    pub fn segment_softmax(&mut self, a: Tensor, offsets: &[usize]) -> Result<Tensor> {
        let va = self.value(a);
        if va.cols() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                left: va.shape(),
                right: (va.rows(), 1),
            });
        }
        check_offsets("segment_softmax", offsets, va.rows())?;
        let mut out = Matrix::zeros(va.rows(), 1);
        for s in 0..offsets.len() - 1 {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            softmax_into(&va.as_slice()[lo..hi], |_| true, &mut out.as_mut_slice()[lo..hi])
                .ok_or(TensorError::AllMasked { row: s })?;
        }
        Ok(self.record(out, Op::SegmentSoftmax(a, offsets.to_vec()), &[a]))
    }

    /// Train-time inverted dropout: each entry is zeroed with probability
    /// `rate` and survivors are divided by `1 - rate`. With `rng == None`
    /// (evaluation) or `rate == 0` this is the identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Tensor, rate: T, rng: Option<&mut R>) -> Result<Tensor> {
        if !(rate >= T::zero() && rate < T::one()) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                reason: "rate must lie in [0, 1)",
            });
        }
        let Some(rng) = rng else { return Ok(a) };
        if rate == T::zero() {
            return Ok(a);
        }
        let keep_scale = T::one() / (T::one() - rate);
        let rate = rate.as_f64();
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let va = self.value(a);
        let data = va.as_slice().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.record(out, Op::Dropout(a, mask), &[a]))
    }
}

/// Numerically stable softmax of `input` restricted to `keep`; returns
/// `None` if nothing is kept.
fn softmax_into<T: Real>(input: &[T], keep: impl Fn(usize) -> bool, out: &mut [T]) -> Option<()> {
    let max = input
        .iter()
        .enumerate()
        .filter(|(c, _)| keep(*c))
        .map(|(_, &x)| x)
        .fold(None, |m: Option<T>, x| Some(m.map_or(x, |m| m.max(x))))?;
    let mut total = T::zero();
    for (c, (&x, o)) in input.iter().zip(out.iter_mut()).enumerate() {
        *o = if keep(c) { (x - max).exp() } else { T::zero() };
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
    Some(())
}

fn check_offsets(op: &'static str, offsets: &[usize], rows: usize) -> Result<()> {
    if offsets.first() != Some(&0) || offsets.last() != Some(&rows) {
        return Err(TensorError::InvalidArgument {
            op,
            reason: "offsets must start at 0 and end at the row count",
        });
    }
    if offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(TensorError::InvalidArgument {
            op,
            reason: "offsets must be non-decreasing",
        });
    }
    Ok(())
}
