//! Forward and backward kernels behind the [`Graph`](crate::Graph) methods.
//!
//! Kernels are plain functions over tensors so they can be reused by
//! inference paths and tested against brute-force oracles in isolation.
//! Reductions use a fixed four-accumulator scheme: fast enough to matter,
//! fully deterministic because the combination order never depends on data.

pub mod conv;
pub mod factorized;
pub mod sample;
pub mod shape;
pub mod softmax;

use crate::scalar::Scalar;

/// Deterministic sum with four interleaved accumulators.
pub fn sum4<T: Scalar>(xs: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let mut chunks = xs.chunks_exact(4);
    for c in &mut chunks {
        acc[0] += c[0];
        acc[1] += c[1];
        acc[2] += c[2];
        acc[3] += c[3];
    }
    for &x in chunks.remainder() {
        acc[0] += x;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Deterministic dot product with four interleaved accumulators.
pub fn dot4<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        acc[0] += *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// `out[i] += s * x[i]` over equal-length slices.
#[inline]
pub(crate) fn axpy<T: Scalar>(out: &mut [T], s: T, x: &[T]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o += s * v;
    }
}
