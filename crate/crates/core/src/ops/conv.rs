//! Dense 2-d convolution and its transpose, with zero padding.
//!
//! Weight layouts follow the usual conventions: `[Cout, Cin, Kh, Kw]` for
//! convolution, `[Cin, Cout, Kh, Kw]` for the transposed form. Loop order is
//! fixed (batch, out channel, in channel, kernel row, kernel column, rows),
//! with contiguous row updates innermost, so results are deterministic and
//! the stride-1 case vectorizes.

use crate::error::CoreError;
use crate::ops::{axpy, dot4};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn conv2d_out_shape(
    xshape: &[usize],
    wshape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize, usize), CoreError> {
    if xshape.len() != 4 || wshape.len() != 4 {
        return Err(CoreError::shape(
            "conv2d",
            format!("expected rank-4 input and weight, got {xshape:?} and {wshape:?}"),
        ));
    }
    if stride == 0 {
        return Err(CoreError::InvalidArg("conv2d stride must be positive".into()));
    }
    let (b, cin, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
    let (cout, cin_w, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    if cin != cin_w {
        return Err(CoreError::shape(
            "conv2d",
            format!("input has {cin} channels but weight expects {cin_w}"),
        ));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(CoreError::shape(
            "conv2d",
            format!("padded input {}x{} smaller than kernel {kh}x{kw}", h + 2 * pad, w + 2 * pad),
        ));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    Ok((b, cout, ho, wo))
}

fn check_bias<T: Scalar>(b: &Tensor<T>, cout: usize) -> Result<(), CoreError> {
    if b.shape() != [cout] {
        return Err(CoreError::shape(
            "conv2d",
            format!("bias shape {:?} does not match {cout} output channels", b.shape()),
        ));
    }
    Ok(())
}

/// Valid output-column range for a given kernel column, plus the first input
/// column it reads. Returns `None` when no output column is valid.
#[inline]
fn col_range(kc: usize, pad: usize, stride: usize, win: usize, wout: usize) -> Option<(usize, usize, usize)> {
    let ow_lo = if pad > kc { (pad - kc).div_ceil(stride) } else { 0 };
    if win + pad <= kc {
        return None;
    }
    let ow_hi = (((win - 1 + pad - kc) / stride) + 1).min(wout);
    if ow_lo >= ow_hi {
        return None;
    }
    let iw0 = ow_lo * stride + kc - pad;
    Some((ow_lo, ow_hi, iw0))
}

pub fn conv2d_fwd<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, CoreError> {
    let (bsz, cout, ho, wo) = conv2d_out_shape(x.shape(), w.shape(), stride, pad)?;
    let (_, cin, hin, win) = x.dims4()?;
    let (_, _, kh, kw) = w.dims4()?;
    if let Some(b) = bias {
        check_bias(b, cout)?;
    }

    let mut out = Tensor::zeros(&[bsz, cout, ho, wo]);
    if let Some(b) = bias {
        let od = out.data_mut();
        for bi in 0..bsz {
            for co in 0..cout {
                let base = ((bi * cout + co) * ho) * wo;
                od[base..base + ho * wo].fill(b.data()[co]);
            }
        }
    }

    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for bi in 0..bsz {
        for co in 0..cout {
            let obase = ((bi * cout + co) * ho) * wo;
            for ci in 0..cin {
                let xbase = ((bi * cin + ci) * hin) * win;
                for kr in 0..kh {
                    for kc in 0..kw {
                        let wv = wd[((co * cin + ci) * kh + kr) * kw + kc];
                        let Some((ow_lo, ow_hi, iw0)) = col_range(kc, pad, stride, win, wo) else {
                            continue;
                        };
                        for oh in 0..ho {
                            let ih = (oh * stride + kr) as isize - pad as isize;
                            if ih < 0 || ih >= hin as isize {
                                continue;
                            }
                            let xrow = &xd[xbase + ih as usize * win..xbase + (ih as usize + 1) * win];
                            let orow = &mut od[obase + oh * wo..obase + (oh + 1) * wo];
                            if stride == 1 {
                                let n = ow_hi - ow_lo;
                                axpy(&mut orow[ow_lo..ow_hi], wv, &xrow[iw0..iw0 + n]);
                            } else {
                                let mut iw = iw0;
                                for o in &mut orow[ow_lo..ow_hi] {
                                    *o += wv * xrow[iw];
                                    iw += stride;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_bwd_x<T: Scalar>(
    gout: &Tensor<T>,
    w: &Tensor<T>,
    xshape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (bsz, cout, ho, wo) = gout.dims4().expect("gout rank");
    let (_, cin, kh, kw) = w.dims4().expect("w rank");
    let (hin, win) = (xshape[2], xshape[3]);
    let mut gx = Tensor::zeros(xshape);
    let gd = gout.data();
    let wd = w.data();
    let gxd = gx.data_mut();
    for bi in 0..bsz {
        for co in 0..cout {
            let obase = ((bi * cout + co) * ho) * wo;
            for ci in 0..cin {
                let xbase = ((bi * cin + ci) * hin) * win;
                for kr in 0..kh {
                    for kc in 0..kw {
                        let wv = wd[((co * cin + ci) * kh + kr) * kw + kc];
                        let Some((ow_lo, ow_hi, iw0)) = col_range(kc, pad, stride, win, wo) else {
                            continue;
                        };
                        for oh in 0..ho {
                            let ih = (oh * stride + kr) as isize - pad as isize;
                            if ih < 0 || ih >= hin as isize {
                                continue;
                            }
                            let grow = &gd[obase + oh * wo..obase + (oh + 1) * wo];
                            let xrow = &mut gxd[xbase + ih as usize * win..xbase + (ih as usize + 1) * win];
                            if stride == 1 {
                                let n = ow_hi - ow_lo;
                                axpy(&mut xrow[iw0..iw0 + n], wv, &grow[ow_lo..ow_hi]);
                            } else {
                                let mut iw = iw0;
                                for &g in &grow[ow_lo..ow_hi] {
                                    xrow[iw] += wv * g;
                                    iw += stride;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

pub fn conv2d_bwd_w<T: Scalar>(
    gout: &Tensor<T>,
    x: &Tensor<T>,
    wshape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (bsz, cout, ho, wo) = gout.dims4().expect("gout rank");
    let (_, cin, hin, win) = x.dims4().expect("x rank");
    let (kh, kw) = (wshape[2], wshape[3]);
    let mut gw = Tensor::zeros(wshape);
    let gd = gout.data();
    let xd = x.data();
    let gwd = gw.data_mut();
    for bi in 0..bsz {
        for co in 0..cout {
            let obase = ((bi * cout + co) * ho) * wo;
            for ci in 0..cin {
                let xbase = ((bi * cin + ci) * hin) * win;
                for kr in 0..kh {
                    for kc in 0..kw {
                        let Some((ow_lo, ow_hi, iw0)) = col_range(kc, pad, stride, win, wo) else {
                            continue;
                        };
                        let mut acc = T::zero();
                        for oh in 0..ho {
                            let ih = (oh * stride + kr) as isize - pad as isize;
                            if ih < 0 || ih >= hin as isize {
                                continue;
                            }
                            let grow = &gd[obase + oh * wo..obase + (oh + 1) * wo];
                            let xrow = &xd[xbase + ih as usize * win..xbase + (ih as usize + 1) * win];
                            if stride == 1 {
                                let n = ow_hi - ow_lo;
                                acc += dot4(&grow[ow_lo..ow_hi], &xrow[iw0..iw0 + n]);
                            } else {
                                let mut iw = iw0;
                                let mut partial = T::zero();
                                for &g in &grow[ow_lo..ow_hi] {
                                    partial += g * xrow[iw];
                                    iw += stride;
                                }
                                acc += partial;
                            }
                        }
                        gwd[((co * cin + ci) * kh + kr) * kw + kc] += acc;
                    }
                }
            }
        }
    }
    gw
}

pub fn conv_bwd_bias<T: Scalar>(gout: &Tensor<T>) -> Tensor<T> {
    let (bsz, cout, ho, wo) = gout.dims4().expect("gout rank");
    let gd = gout.data();
    let mut gb = Tensor::zeros(&[cout]);
    let gbd = gb.data_mut();
    for bi in 0..bsz {
        for co in 0..cout {
            let base = ((bi * cout + co) * ho) * wo;
            gbd[co] += crate::ops::sum4(&gd[base..base + ho * wo]);
        }
    }
    gb
}

pub fn convt2d_out_shape(
    xshape: &[usize],
    wshape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize, usize), CoreError> {
    if xshape.len() != 4 || wshape.len() != 4 {
        return Err(CoreError::shape(
            "conv2d_transposed",
            format!("expected rank-4 input and weight, got {xshape:?} and {wshape:?}"),
        ));
    }
    if stride == 0 {
        return Err(CoreError::InvalidArg("conv2d_transposed stride must be positive".into()));
    }
    let (b, cin, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
    let (cin_w, cout, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    if cin != cin_w {
        return Err(CoreError::shape(
            "conv2d_transposed",
            format!("input has {cin} channels but weight expects {cin_w}"),
        ));
    }
    let ho = (h - 1) * stride + kh;
    let wo = (w - 1) * stride + kw;
    if ho < 2 * pad + 1 || wo < 2 * pad + 1 {
        return Err(CoreError::shape(
            "conv2d_transposed",
            format!("output {ho}x{wo} before cropping smaller than 2*pad+1 with pad {pad}"),
        ));
    }
    Ok((b, cout, ho - 2 * pad, wo - 2 * pad))
}

pub fn convt2d_fwd<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, CoreError> {
    let (bsz, cout, ho, wo) = convt2d_out_shape(x.shape(), w.shape(), stride, pad)?;
    let (_, cin, hin, win) = x.dims4()?;
    let (_, _, kh, kw) = w.dims4()?;
    if let Some(b) = bias {
        check_bias(b, cout)?;
    }

    let mut out = Tensor::zeros(&[bsz, cout, ho, wo]);
    if let Some(b) = bias {
        let od = out.data_mut();
        for bi in 0..bsz {
            for co in 0..cout {
                let base = ((bi * cout + co) * ho) * wo;
                od[base..base + ho * wo].fill(b.data()[co]);
            }
        }
    }

    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for bi in 0..bsz {
        for ci in 0..cin {
            let xbase = ((bi * cin + ci) * hin) * win;
            for co in 0..cout {
                let obase = ((bi * cout + co) * ho) * wo;
                for kr in 0..kh {
                    for kc in 0..kw {
                        let wv = wd[((ci * cout + co) * kh + kr) * kw + kc];
                        for ihr in 0..hin {
                            let oh = (ihr * stride + kr) as isize - pad as isize;
                            if oh < 0 || oh >= ho as isize {
                                continue;
                            }
                            let xrow = &xd[xbase + ihr * win..xbase + (ihr + 1) * win];
                            let orow = &mut od[obase + oh as usize * wo..obase + (oh as usize + 1) * wo];
                            for (iwc, &xv) in xrow.iter().enumerate() {
                                let ow = (iwc * stride + kc) as isize - pad as isize;
                                if ow < 0 || ow >= wo as isize {
                                    continue;
                                }
                                orow[ow as usize] += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn convt2d_bwd_x<T: Scalar>(
    gout: &Tensor<T>,
    w: &Tensor<T>,
    xshape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (bsz, cout, ho, wo) = gout.dims4().expect("gout rank");
    let (cin, _, kh, kw) = w.dims4().expect("w rank");
    let (hin, win) = (xshape[2], xshape[3]);
    let mut gx = Tensor::zeros(xshape);
    let gd = gout.data();
    let wd = w.data();
    let gxd = gx.data_mut();
    for bi in 0..bsz {
        for ci in 0..cin {
            let xbase = ((bi * cin + ci) * hin) * win;
            for co in 0..cout {
                let obase = ((bi * cout + co) * ho) * wo;
                for kr in 0..kh {
                    for kc in 0..kw {
                        let wv = wd[((ci * cout + co) * kh + kr) * kw + kc];
                        for ihr in 0..hin {
                            let oh = (ihr * stride + kr) as isize - pad as isize;
                            if oh < 0 || oh >= ho as isize {
                                continue;
                            }
                            let grow = &gd[obase + oh as usize * wo..obase + (oh as usize + 1) * wo];
                            let xrow = &mut gxd[xbase + ihr * win..xbase + (ihr + 1) * win];
                            for (iwc, gx_v) in xrow.iter_mut().enumerate() {
                                let ow = (iwc * stride + kc) as isize - pad as isize;
                                if ow < 0 || ow >= wo as isize {
                                    continue;
                                }
                                *gx_v += wv * grow[ow as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

pub fn convt2d_bwd_w<T: Scalar>(
    gout: &Tensor<T>,
    x: &Tensor<T>,
    wshape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (bsz, cout, ho, wo) = gout.dims4().expect("gout rank");
    let (_, cin, hin, win) = x.dims4().expect("x rank");
    let (kh, kw) = (wshape[2], wshape[3]);
    let mut gw = Tensor::zeros(wshape);
    let gd = gout.data();
    let xd = x.data();
    let gwd = gw.data_mut();
    for bi in 0..bsz {
        for ci in 0..cin {
            let xbase = ((bi * cin + ci) * hin) * win;
            for co in 0..cout {
                let obase = ((bi * cout + co) * ho) * wo;
                for kr in 0..kh {
                    for kc in 0..kw {
                        let mut acc = T::zero();
                        for ihr in 0..hin {
                            let oh = (ihr * stride + kr) as isize - pad as isize;
                            if oh < 0 || oh >= ho as isize {
                                continue;
                            }
                            let grow = &gd[obase + oh as usize * wo..obase + (oh as usize + 1) * wo];
                            let xrow = &xd[xbase + ihr * win..xbase + (ihr + 1) * win];
                            for (iwc, &xv) in xrow.iter().enumerate() {
                                let ow = (iwc * stride + kc) as isize - pad as isize;
                                if ow < 0 || ow >= wo as isize {
                                    continue;
                                }
                                acc += xv * grow[ow as usize];
                            }
                        }
                        gwd[((ci * cout + co) * kh + kr) * kw + kc] += acc;
                    }
                }
            }
        }
    }
    gw
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Brute-force reference: walks every output element and sums the window.
    fn conv2d_naive(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: Option<&Tensor<f64>>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (bsz, cin, h, win) = x.dims4().unwrap();
        let (cout, _, kh, kw) = w.dims4().unwrap();
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (win + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[bsz, cout, ho, wo]);
        for bi in 0..bsz {
            for co in 0..cout {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = b.map(|t| t.data()[co]).unwrap_or(0.0);
                        for ci in 0..cin {
                            for kr in 0..kh {
                                for kc in 0..kw {
                                    let ih = (oh * stride + kr) as isize - pad as isize;
                                    let iw = (ow * stride + kc) as isize - pad as isize;
                                    if ih < 0 || iw < 0 || ih >= h as isize || iw >= win as isize {
                                        continue;
                                    }
                                    acc += x.at4(bi, ci, ih as usize, iw as usize)
                                        * w.at4(co, ci, kr, kc);
                                }
                            }
                        }
                        *out.at4_mut(bi, co, oh, ow) = acc;
                    }
                }
            }
        }
        out
    }

    /// Transposed convolution reference via the gradient relationship: placing
    /// each input element into the output window it influences.
    fn convt2d_naive(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: Option<&Tensor<f64>>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (bsz, cin, hin, win) = x.dims4().unwrap();
        let (_, cout, kh, kw) = w.dims4().unwrap();
        let ho = (hin - 1) * stride + kh - 2 * pad;
        let wo = (win - 1) * stride + kw - 2 * pad;
        let mut out = Tensor::zeros(&[bsz, cout, ho, wo]);
        for bi in 0..bsz {
            for co in 0..cout {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = b.map(|t| t.data()[co]).unwrap_or(0.0);
                        for ci in 0..cin {
                            for ih in 0..hin {
                                for iw in 0..win {
                                    let kr = oh as isize + pad as isize - (ih * stride) as isize;
                                    let kc = ow as isize + pad as isize - (iw * stride) as isize;
                                    if kr < 0 || kc < 0 || kr >= kh as isize || kc >= kw as isize {
                                        continue;
                                    }
                                    acc += x.at4(bi, ci, ih, iw)
                                        * w.at4(ci, co, kr as usize, kc as usize);
                                }
                            }
                        }
                        *out.at4_mut(bi, co, oh, ow) = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_naive_oracle() {
        let rng = Rng::new(101);
        for case in 0u64..40 {
            let mut r = rng.fork(case);
            let bsz = 1 + r.below(2) as usize;
            let cin = 1 + r.below(3) as usize;
            let cout = 1 + r.below(3) as usize;
            let kh = [1, 3, 4, 5][r.below(4) as usize];
            let kw = [1, 3, 4, 5][r.below(4) as usize];
            let stride = 1 + r.below(2) as usize;
            let pad = r.below(3) as usize;
            let h = kh + r.below(6) as usize;
            let w = kw + r.below(6) as usize;
            let x = Tensor::rand_uniform(&[bsz, cin, h, w], -1.0, 1.0, &mut r);
            let wt = Tensor::rand_uniform(&[cout, cin, kh, kw], -1.0, 1.0, &mut r);
            let b = Tensor::rand_uniform(&[cout], -0.5, 0.5, &mut r);
            let fast = conv2d_fwd(&x, &wt, Some(&b), stride, pad).unwrap();
            let slow = conv2d_naive(&x, &wt, Some(&b), stride, pad);
            assert!(
                fast.max_abs_diff(&slow) < 1e-12,
                "case {case}: diff {}",
                fast.max_abs_diff(&slow)
            );
        }
    }

    #[test]
    fn convt2d_matches_naive_oracle() {
        let rng = Rng::new(202);
        for case in 0u64..40 {
            let mut r = rng.fork(case);
            let bsz = 1 + r.below(2) as usize;
            let cin = 1 + r.below(3) as usize;
            let cout = 1 + r.below(3) as usize;
            let kh = [2, 3, 4][r.below(3) as usize];
            let kw = [2, 3, 4][r.below(3) as usize];
            let stride = 1 + r.below(2) as usize;
            let pad = (r.below(2) as usize).min(kh.min(kw) / 2);
            let h = 2 + r.below(5) as usize;
            let w = 2 + r.below(5) as usize;
            let x = Tensor::rand_uniform(&[bsz, cin, h, w], -1.0, 1.0, &mut r);
            let wt = Tensor::rand_uniform(&[cin, cout, kh, kw], -1.0, 1.0, &mut r);
            let b = Tensor::rand_uniform(&[cout], -0.5, 0.5, &mut r);
            let fast = convt2d_fwd(&x, &wt, Some(&b), stride, pad).unwrap();
            let slow = convt2d_naive(&x, &wt, Some(&b), stride, pad);
            assert!(
                fast.max_abs_diff(&slow) < 1e-12,
                "case {case}: diff {}",
                fast.max_abs_diff(&slow)
            );
        }
    }

    #[test]
    fn conv2d_known_values() {
        // 1x1x3x3 input, 1x1x2x2 kernel of ones, stride 1, no padding:
        // each output is the sum of a 2x2 window.
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = conv2d_fwd(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f32>::zeros(&[2, 4, 3, 3]);
        let err = conv2d_fwd(&x, &w, None, 1, 1).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("3 channels") && msg.contains('4'), "{msg}");
    }

    #[test]
    fn convt2d_doubles_resolution() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5, 7]);
        let w = Tensor::<f32>::zeros(&[2, 3, 4, 4]);
        let y = convt2d_fwd(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 10, 14]);
    }
}
