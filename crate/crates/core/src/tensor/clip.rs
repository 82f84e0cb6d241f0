use super::Matrix;
use crate::Real;

/// L2 norm over all entries of all matrices.
pub fn global_norm<T: Real>(grads: &[Matrix<T>]) -> T {
    grads.iter().map(Matrix::norm_sq).sum::<T>().sqrt()
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the factor applied, which is 1 when no clipping was needed.
pub fn clip_global_norm<T: Real>(grads: &mut [Matrix<T>], max_norm: T) -> T {
    assert!(max_norm > T::zero(), "max_norm must be positive");
    let norm = global_norm(grads);
    if norm <= max_norm {
        return T::one();
    }
    let scale = max_norm / norm;
    for g in grads.iter_mut() {
        for x in g.as_mut_slice() {
            *x = *x * scale;
        }
    }
    scale
}
