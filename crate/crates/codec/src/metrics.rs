//! Quality metrics: sRGB PSNR and multi-scale structural similarity.
//!
//! MS-SSIM follows the standard construction: an 11-tap Gaussian window
//! (sigma 1.5), contrast-structure terms at up to five dyadic scales with
//! weights [0.0448, 0.2856, 0.3001, 0.2363, 0.1333], a luminance term at
//! the coarsest scale, and 2x2 average-pool downsampling. Inputs too small
//! for five scales use as many as fit (window must fit the coarsest scale)
//! with the leading weights renormalized.

use envc_core::{Graph, Scalar, Tensor, VarId};

use crate::error::{CodecError, Result};
use crate::frame::Frame;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn dims_match(a: &Frame, b: &Frame) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(CodecError::dimension(format!(
            "frame size mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Mean squared error over all RGB samples of one frame pair (8-bit scale).
pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    dims_match(a, b)?;
    let (pa, pb) = (a.planes(), b.planes());
    let sum: f64 = pa
        .iter()
        .zip(pb.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / pa.len() as f64)
}

/// `10*log10(255^2 / mse)`, capped for identical content.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// PSNR over all RGB samples of the whole sequence.
pub fn sequence_psnr(a: &[Frame], b: &[Frame]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CodecError::dimension(format!(
            "sequence length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += mse(x, y)?;
    }
    Ok(psnr_from_mse(acc / a.len() as f64))
}

/// Normalized Gaussian window taps.
pub fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= s;
    }
    taps
}

/// Number of usable scales for an image: each scale halves the previous
/// one and the window must still fit at the coarsest.
pub fn ms_ssim_levels(height: usize, width: usize) -> usize {
    let mut levels = 0;
    let (mut h, mut w) = (height, width);
    while levels < MS_SSIM_WEIGHTS.len() && h >= WINDOW && w >= WINDOW {
        levels += 1;
        h /= 2;
        w /= 2;
    }
    levels
}

fn level_weights(levels: usize) -> Vec<f64> {
    let raw = &MS_SSIM_WEIGHTS[..levels];
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

struct Plane {
    h: usize,
    w: usize,
    d: Vec<f64>,
}

/// Separable valid-mode Gaussian blur.
fn blur(p: &Plane, taps: &[f64]) -> Plane {
    let k = taps.len();
    let (h, w) = (p.h, p.w - k + 1);
    let mut horiz = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * p.d[y * p.w + x + i];
            }
            horiz[y * w + x] = acc;
        }
    }
    let hh = h - k + 1;
    let mut out = vec![0.0; hh * w];
    for y in 0..hh {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * horiz[(y + i) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Plane { h: hh, w, d: out }
}

/// 2x2 average pool with floor dimensions.
fn downsample(p: &Plane) -> Plane {
    let (h, w) = (p.h / 2, p.w / 2);
    let mut d = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let at = |dy: usize, dx: usize| p.d[(2 * y + dy) * p.w + 2 * x + dx];
            d[y * w + x] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
        }
    }
    Plane { h, w, d }
}

/// Mean contrast-structure term at one scale; the luminance mean is also
/// returned for use at the coarsest scale. Local moments use the
/// computational form `cov = E[xy] - E[x]E[y]`.
fn scale_terms(x: &Plane, y: &Plane, taps: &[f64], peak: f64) -> (f64, f64) {
    let c1 = (K1 * peak) * (K1 * peak);
    let c2 = (K2 * peak) * (K2 * peak);
    let prod = |a: &Plane, b: &Plane| Plane {
        h: a.h,
        w: a.w,
        d: a.d.iter().zip(&b.d).map(|(&u, &v)| u * v).collect(),
    };
    let mu_x = blur(x, taps);
    let mu_y = blur(y, taps);
    let e_xx = blur(&prod(x, x), taps);
    let e_yy = blur(&prod(y, y), taps);
    let e_xy = blur(&prod(x, y), taps);

    let n = mu_x.d.len();
    let (mut cs_sum, mut l_sum) = (0.0, 0.0);
    for i in 0..n {
        let (mx, my) = (mu_x.d[i], mu_y.d[i]);
        let var_x = e_xx.d[i] - mx * mx;
        let var_y = e_yy.d[i] - my * my;
        let cov = e_xy.d[i] - mx * my;
        cs_sum += (2.0 * cov + c2) / (var_x + var_y + c2);
        l_sum += (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
    }
    (cs_sum / n as f64, l_sum / n as f64)
}

fn channel_plane(f: &Frame, c: usize) -> Plane {
    let (h, w) = (f.height(), f.width());
    let d = (0..h * w).map(|i| f.planes()[c * h * w + i] as f64).collect();
    Plane { h, w, d }
}

/// MS-SSIM of one frame pair. Channel maps are pooled together at every
/// scale (channels act as batch), so the score is a single power product.
pub fn ms_ssim(a: &Frame, b: &Frame) -> Result<f64> {
    dims_match(a, b)?;
    let levels = ms_ssim_levels(a.height(), a.width());
    if levels == 0 {
        return Err(CodecError::dimension(format!(
            "frame {}x{} is smaller than the {WINDOW}x{WINDOW} window",
            a.width(),
            a.height()
        )));
    }
    let taps = gaussian_taps(WINDOW, WINDOW_SIGMA);
    let weights = level_weights(levels);
    let mut xs: Vec<Plane> = (0..3).map(|c| channel_plane(a, c)).collect();
    let mut ys: Vec<Plane> = (0..3).map(|c| channel_plane(b, c)).collect();
    let mut score = 1.0f64;
    for (lvl, wgt) in weights.iter().enumerate() {
        let (mut cs_acc, mut l_acc) = (0.0, 0.0);
        for c in 0..3 {
            let (cs, lum) = scale_terms(&xs[c], &ys[c], &taps, 255.0);
            cs_acc += cs;
            l_acc += lum;
        }
        let cs = (cs_acc / 3.0).max(0.0);
        let lum = (l_acc / 3.0).max(0.0);
        let term = if lvl + 1 == levels { lum * cs } else { cs };
        score *= term.powf(*wgt);
        if lvl + 1 < levels {
            xs = xs.iter().map(downsample).collect();
            ys = ys.iter().map(downsample).collect();
        }
    }
    Ok(score.clamp(0.0, 1.0))
}

/// Sequence MS-SSIM: mean of the per-frame scores.
pub fn sequence_ms_ssim(a: &[Frame], b: &[Frame]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CodecError::dimension(format!(
            "sequence length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += ms_ssim(x, y)?;
    }
    Ok(acc / a.len() as f64)
}

/// Diagonal (per-channel) constant convolution kernel.
fn diag_kernel<T: Scalar>(c: usize, kh: usize, kw: usize, taps: &[f64]) -> Tensor<T> {
    assert_eq!(taps.len(), kh * kw);
    let mut t = Tensor::zeros(&[c, c, kh, kw]);
    let d = t.data_mut();
    for ch in 0..c {
        for (i, &v) in taps.iter().enumerate() {
            d[(ch * c + ch) * kh * kw + i] = T::lit(v);
        }
    }
    t
}

/// Differentiable MS-SSIM over `[0,1]`-scaled image tensors `[B,C,H,W]`.
/// `levels` should come from [`ms_ssim_levels`] for the input size.
pub fn ms_ssim_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: VarId,
    y: VarId,
    levels: usize,
) -> Result<VarId> {
    let (_, c, h, w) = g.value(x).dims4()?;
    if levels == 0 || levels > MS_SSIM_WEIGHTS.len() {
        return Err(CodecError::config(format!("invalid ms-ssim level count {levels}")));
    }
    if (h >> (levels - 1)) < WINDOW || (w >> (levels - 1)) < WINDOW {
        return Err(CodecError::dimension(format!(
            "input {h}x{w} too small for {levels} ms-ssim scales"
        )));
    }
    let taps = gaussian_taps(WINDOW, WINDOW_SIGMA);
    let gh = g.constant(diag_kernel::<T>(c, WINDOW, 1, &taps));
    let gw = g.constant(diag_kernel::<T>(c, 1, WINDOW, &taps));
    let pool = g.constant(diag_kernel::<T>(c, 2, 2, &[0.25; 4]));
    let c1 = T::lit(K1 * K1);
    let c2 = T::lit(K2 * K2);
    let weights = level_weights(levels);

    let blur = |g: &mut Graph<T>, v: VarId| -> Result<VarId> {
        let v = g.conv2d(v, gw, None, 1, 0)?;
        Ok(g.conv2d(v, gh, None, 1, 0)?)
    };

    let (mut xs, mut ys) = (x, y);
    let mut score: Option<VarId> = None;
    for (lvl, wgt) in weights.iter().enumerate() {
        let mu_x = blur(g, xs)?;
        let mu_y = blur(g, ys)?;
        let xx = g.mul(xs, xs)?;
        let yy = g.mul(ys, ys)?;
        let xy = g.mul(xs, ys)?;
        let e_xx = blur(g, xx)?;
        let e_yy = blur(g, yy)?;
        let e_xy = blur(g, xy)?;

        let mxmx = g.mul(mu_x, mu_x)?;
        let mymy = g.mul(mu_y, mu_y)?;
        let mxmy = g.mul(mu_x, mu_y)?;
        let var_x = g.sub(e_xx, mxmx)?;
        let var_y = g.sub(e_yy, mymy)?;
        let cov = g.sub(e_xy, mxmy)?;

        let num = g.mul_scalar(cov, T::lit(2.0))?;
        let num = g.add_scalar(num, c2)?;
        let den = g.add(var_x, var_y)?;
        let den = g.add_scalar(den, c2)?;
        let cs = g.div(num, den)?;
        let mut term = g.mean_all(cs)?;

        if lvl + 1 == levels {
            let lnum = g.mul_scalar(mxmy, T::lit(2.0))?;
            let lnum = g.add_scalar(lnum, c1)?;
            let lden = g.add(mxmx, mymy)?;
            let lden = g.add_scalar(lden, c1)?;
            let lum = g.div(lnum, lden)?;
            let lum = g.mean_all(lum)?;
            term = g.mul(term, lum)?;
        }
        let term = g.clamp_min(term, T::lit(1e-8))?;
        let term = g.pow_scalar(term, T::lit(*wgt))?;
        score = Some(match score {
            Some(s) => g.mul(s, term)?,
            None => term,
        });

        if lvl + 1 < levels {
            xs = g.conv2d(xs, pool, None, 2, 0)?;
            ys = g.conv2d(ys, pool, None, 2, 0)?;
        }
    }
    Ok(score.expect("levels >= 1"))
}
