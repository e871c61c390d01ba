//! Channel concatenation, channel slicing and per-location scaling.

use crate::error::CoreError;
use crate::ops::sum4;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn concat_channels_fwd<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>, CoreError> {
    let (b0, _, h0, w0) = xs[0].dims4().map_err(|_| {
        CoreError::shape("concat_channels", format!("inputs must be rank 4, got {:?}", xs[0].shape()))
    })?;
    let mut ctotal = 0;
    for (i, x) in xs.iter().enumerate() {
        let (b, c, h, w) = x.dims4().map_err(|_| {
            CoreError::shape("concat_channels", format!("input {i} must be rank 4, got {:?}", x.shape()))
        })?;
        if b != b0 || h != h0 || w != w0 {
            return Err(CoreError::shape(
                "concat_channels",
                format!(
                    "input {i} has shape {:?}, incompatible with {:?} on batch or spatial dims",
                    x.shape(),
                    xs[0].shape()
                ),
            ));
        }
        ctotal += c;
    }
    let mut out = Tensor::zeros(&[b0, ctotal, h0, w0]);
    let plane = h0 * w0;
    let od = out.data_mut();
    for bi in 0..b0 {
        let mut co = 0;
        for x in xs {
            let c = x.shape()[1];
            let src = &x.data()[bi * c * plane..(bi + 1) * c * plane];
            let dst = &mut od[(bi * ctotal + co) * plane..(bi * ctotal + co + c) * plane];
            dst.copy_from_slice(src);
            co += c;
        }
    }
    Ok(out)
}

pub fn slice_channels_fwd<T: Scalar>(x: &Tensor<T>, from: usize, to: usize) -> Result<Tensor<T>, CoreError> {
    let (b, c, h, w) = x.dims4().map_err(|_| {
        CoreError::shape("slice_channels", format!("input must be rank 4, got {:?}", x.shape()))
    })?;
    if from >= to || to > c {
        return Err(CoreError::shape(
            "slice_channels",
            format!("range [{from}, {to}) invalid for {c} channels"),
        ));
    }
    let cs = to - from;
    let plane = h * w;
    let mut out = Tensor::zeros(&[b, cs, h, w]);
    let od = out.data_mut();
    for bi in 0..b {
        let src = &x.data()[(bi * c + from) * plane..(bi * c + to) * plane];
        od[bi * cs * plane..(bi + 1) * cs * plane].copy_from_slice(src);
    }
    Ok(out)
}

pub fn slice_channels_bwd<T: Scalar>(gout: &Tensor<T>, xshape: &[usize], from: usize, to: usize) -> Tensor<T> {
    let (b, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
    let plane = h * w;
    let cs = to - from;
    let mut gx = Tensor::zeros(xshape);
    let gd = gx.data_mut();
    for bi in 0..b {
        let dst = &mut gd[(bi * c + from) * plane..(bi * c + to) * plane];
        dst.copy_from_slice(&gout.data()[bi * cs * plane..(bi + 1) * cs * plane]);
    }
    gx
}

pub fn mul_spatial_fwd<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
    let (b, c, h, wd) = x.dims4().map_err(|_| {
        CoreError::shape("mul_spatial", format!("input must be rank 4, got {:?}", x.shape()))
    })?;
    let (bw, cw, hw, ww) = w.dims4().map_err(|_| {
        CoreError::shape("mul_spatial", format!("weight must be rank 4, got {:?}", w.shape()))
    })?;
    if bw != b || cw != 1 || hw != h || ww != wd {
        return Err(CoreError::shape(
            "mul_spatial",
            format!("weight shape {:?} must be [{b}, 1, {h}, {wd}]", w.shape()),
        ));
    }
    let plane = h * wd;
    let mut out = x.clone();
    let od = out.data_mut();
    for bi in 0..b {
        let wrow = &w.data()[bi * plane..(bi + 1) * plane];
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            for (o, &s) in od[base..base + plane].iter_mut().zip(wrow) {
                *o = *o * s;
            }
        }
    }
    Ok(out)
}

pub fn mul_spatial_bwd<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    want_x: bool,
    want_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (b, c, h, wd) = x.dims4().expect("x rank");
    let plane = h * wd;
    let gx = want_x.then(|| {
        let mut gx = gout.clone();
        let gd = gx.data_mut();
        for bi in 0..b {
            let wrow = &w.data()[bi * plane..(bi + 1) * plane];
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                for (g, &s) in gd[base..base + plane].iter_mut().zip(wrow) {
                    *g = *g * s;
                }
            }
        }
        gx
    });
    let gw = want_w.then(|| {
        let mut gw = Tensor::zeros(w.shape());
        let gwd = gw.data_mut();
        for bi in 0..b {
            let wbase = bi * plane;
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                let grow = &gout.data()[base..base + plane];
                let xrow = &x.data()[base..base + plane];
                for p in 0..plane {
                    gwd[wbase + p] += grow[p] * xrow[p];
                }
            }
        }
        gw
    });
    (gx, gw)
}

/// Per-channel spatial sums; helper shared by a few backward passes and tests.
pub fn channel_sums<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let (b, c, h, w) = x.dims4().expect("rank 4");
    let plane = h * w;
    let mut sums = vec![T::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            sums[ci] += sum4(&x.data()[base..base + plane]);
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_slice_round_trips() {
        let a = Tensor::<f64>::from_fn(&[2, 2, 2, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 3, 2, 2], |i| 100.0 + i as f64);
        let cat = concat_channels_fwd(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[2, 5, 2, 2]);
        let a2 = slice_channels_fwd(&cat, 0, 2).unwrap();
        let b2 = slice_channels_fwd(&cat, 2, 5).unwrap();
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let b = Tensor::<f32>::zeros(&[1, 2, 4, 5]);
        assert!(concat_channels_fwd(&[&a, &b]).is_err());
    }

    #[test]
    fn slice_rejects_bad_range() {
        let a = Tensor::<f32>::zeros(&[1, 4, 2, 2]);
        assert!(slice_channels_fwd(&a, 2, 2).is_err());
        assert!(slice_channels_fwd(&a, 3, 6).is_err());
    }

    #[test]
    fn mul_spatial_broadcasts_over_channels() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 1, 2], |i| i as f64 + 1.0); // [1,2,3,4]
        let w = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![10.0, 0.5]).unwrap();
        let y = mul_spatial_fwd(&x, &w).unwrap();
        assert_eq!(y.data(), &[10.0, 1.0, 30.0, 2.0]);
    }

    #[test]
    fn mul_spatial_weight_gradient_sums_channels() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 1, 1], |i| i as f64 + 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 1, 1], 2.0);
        let g = Tensor::<f64>::full(&[1, 3, 1, 1], 1.0);
        let (gx, gw) = mul_spatial_bwd(&x, &w, &g, true, true);
        assert_eq!(gx.unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(gw.unwrap().data(), &[6.0]); // 1+2+3
    }
}
