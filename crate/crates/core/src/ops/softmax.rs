//! Softmax along an arbitrary axis, with the usual max-subtraction for
//! stability.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn lane_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let k = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, k, inner)
}

pub fn softmax_fwd<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, k, inner) = lane_geometry(x.shape(), axis);
    let mut out = x.clone();
    let od = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * k * inner + i;
            let mut m = od[base];
            for j in 1..k {
                let v = od[base + j * inner];
                if v > m {
                    m = v;
                }
            }
            let mut sum = T::zero();
            for j in 0..k {
                let e = (od[base + j * inner] - m).exp();
                od[base + j * inner] = e;
                sum += e;
            }
            for j in 0..k {
                od[base + j * inner] = od[base + j * inner] / sum;
            }
        }
    }
    out
}

/// Backward pass given the forward output `s`: `gx = s * (g - sum(g * s))`.
pub fn softmax_bwd<T: Scalar>(s: &Tensor<T>, gout: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, k, inner) = lane_geometry(s.shape(), axis);
    let mut gx = Tensor::zeros(s.shape());
    let sd = s.data();
    let gd = gout.data();
    let gxd = gx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * k * inner + i;
            let mut dot = T::zero();
            for j in 0..k {
                dot += gd[base + j * inner] * sd[base + j * inner];
            }
            for j in 0..k {
                let idx = base + j * inner;
                gxd[idx] = sd[idx] * (gd[idx] - dot);
            }
        }
    }
    gx
}
