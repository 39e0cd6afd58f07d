//! Small dense kernels for the forward/backward hot paths.
//!
//! Weight matrices are stored row-major with one row per output coordinate,
//! so every kernel streams rows sequentially. The dot product keeps four
//! independent accumulators; the summation order is fixed, which keeps
//! results bitwise reproducible.

use crate::scalar::Real;

#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut tail = F::zero();
    for i in 4 * chunks..a.len() {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

/// `y += a * x`.
#[inline]
pub(crate) fn axpy<F: Real>(a: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}

/// `out += W * input` for row-major `W` of shape `out.len() x input.len()`.
pub(crate) fn matvec_add<F: Real>(w: &[F], input: &[F], out: &mut [F]) {
    debug_assert_eq!(w.len(), input.len() * out.len());
    for (o, row) in out.iter_mut().zip(w.chunks_exact(input.len())) {
        *o = *o + dot(row, input);
    }
}

/// `grad_in += W^T * delta` for the same row-major `W`.
pub(crate) fn matvec_transpose_add<F: Real>(w: &[F], delta: &[F], grad_in: &mut [F]) {
    debug_assert_eq!(w.len(), delta.len() * grad_in.len());
    for (d, row) in delta.iter().zip(w.chunks_exact(grad_in.len())) {
        axpy(*d, row, grad_in);
    }
}

/// Rank-one update `grad_w += delta * input^T` (row-major, rows follow `delta`).
pub(crate) fn outer_add<F: Real>(delta: &[F], input: &[F], grad_w: &mut [F]) {
    debug_assert_eq!(grad_w.len(), delta.len() * input.len());
    for (d, row) in delta.iter().zip(grad_w.chunks_exact_mut(input.len())) {
        axpy(*d, input, row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (1..=7).map(|i| i as f64).collect();
        let b: Vec<f64> = vec![1.0; 7];
        assert_eq!(dot(&a, &b), 28.0);
    }

    #[test]
    fn matvec_roundtrip() {
        // W = [[1,2],[3,4],[5,6]], x = [1,-1]
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = [1.0, -1.0];
        let mut out = [0.0; 3];
        matvec_add(&w, &x, &mut out);
        assert_eq!(out, [-1.0, -1.0, -1.0]);

        let delta = [1.0, 0.0, -1.0];
        let mut grad_in = [0.0; 2];
        matvec_transpose_add(&w, &delta, &mut grad_in);
        assert_eq!(grad_in, [-4.0, -4.0]);

        let mut grad_w = [0.0; 6];
        outer_add(&delta, &x, &mut grad_w);
        assert_eq!(grad_w, [1.0, -1.0, 0.0, 0.0, -1.0, 1.0]);
    }
}
