//! Bjøntegaard delta rate: average rate difference between two
//! rate-quality curves over their shared quality range.

use crate::error::{CodecError, Result};

/// One point of a rate-quality curve. `rate` is typically bits per pixel,
/// `quality` PSNR in dB or an MS-SSIM value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub rate: f64,
    pub quality: f64,
}

impl RdPoint {
    pub fn new(rate: f64, quality: f64) -> Self {
        RdPoint { rate, quality }
    }
}

/// Cubic least-squares coefficients `c0 + c1 u + c2 u² + c3 u³` fitted on
/// a shifted/scaled quality axis shared by both curves.
fn fit_cubic(us: &[f64], ys: &[f64]) -> Result<[f64; 4]> {
    // Normal equations: moments up to u^6 and correlations up to u^3 y.
    let mut m = [[0.0f64; 4]; 4];
    let mut rhs = [0.0f64; 4];
    for (&u, &y) in us.iter().zip(ys) {
        let pow = [1.0, u, u * u, u * u * u];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] += pow[i] * pow[j];
            }
            rhs[i] += pow[i] * y;
        }
    }
    // Gaussian elimination with partial pivoting.
    let mut a = [[0.0f64; 5]; 4];
    for i in 0..4 {
        a[i][..4].copy_from_slice(&m[i]);
        a[i][4] = rhs[i];
    }
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("rows remain");
        if a[pivot][col].abs() < 1e-200 {
            return Err(CodecError::config(
                "degenerate rate-quality curve: cubic fit is singular",
            ));
        }
        a.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..5 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut c = [0.0f64; 4];
    for i in (0..4).rev() {
        let mut v = a[i][4];
        for j in i + 1..4 {
            v -= a[i][j] * c[j];
        }
        c[i] = v / a[i][i];
    }
    Ok(c)
}

/// Definite integral of the fitted cubic over `[lo, hi]`.
fn integrate_cubic(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let anti = |u: f64| c[0] * u + c[1] * u * u / 2.0 + c[2] * u * u * u / 3.0 + c[3] * u * u * u * u / 4.0;
    anti(hi) - anti(lo)
}

/// Validated, quality-sorted copy of a curve.
fn prepare(label: &str, points: &[RdPoint]) -> Result<Vec<RdPoint>> {
    if points.len() < 4 {
        return Err(CodecError::config(format!(
            "{label} curve needs at least 4 points, got {}",
            points.len()
        )));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.quality.total_cmp(&b.quality));
    for pair in sorted.windows(2) {
        if pair[1].quality <= pair[0].quality {
            return Err(CodecError::config(format!(
                "{label} curve has duplicate quality {}",
                pair[0].quality
            )));
        }
        if pair[1].rate < pair[0].rate {
            return Err(CodecError::config(format!(
                "{label} curve is not monotone: rate drops from {} to {} as quality rises",
                pair[0].rate, pair[1].rate
            )));
        }
    }
    for p in &sorted {
        if !(p.rate > 0.0) || !p.rate.is_finite() || !p.quality.is_finite() {
            return Err(CodecError::config(format!(
                "{label} curve has an invalid point (rate {}, quality {})",
                p.rate, p.quality
            )));
        }
    }
    Ok(sorted)
}

/// Average rate difference of `test` against `anchor` in percent. Both
/// curves are fitted with a cubic in log10(rate) over quality and the gap
/// is integrated across the overlapping quality range; negative values
/// mean the test codec spends less rate at equal quality.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    let anchor = prepare("anchor", anchor)?;
    let test = prepare("test", test)?;

    let lo = anchor[0].quality.max(test[0].quality);
    let hi = anchor[anchor.len() - 1]
        .quality
        .min(test[test.len() - 1].quality);
    if hi <= lo {
        return Err(CodecError::config(format!(
            "curves share no quality range (overlap [{lo}, {hi}])"
        )));
    }

    // One shared affine map of the quality axis keeps the two fits on the
    // same basis, so identical curves cancel exactly.
    let q_min = anchor[0].quality.min(test[0].quality);
    let q_max = anchor[anchor.len() - 1]
        .quality
        .max(test[test.len() - 1].quality);
    let span = (q_max - q_min).max(1e-12);
    let to_u = |q: f64| (q - q_min) / span;

    let fit = |curve: &[RdPoint]| -> Result<[f64; 4]> {
        let us: Vec<f64> = curve.iter().map(|p| to_u(p.quality)).collect();
        let ys: Vec<f64> = curve.iter().map(|p| p.rate.log10()).collect();
        fit_cubic(&us, &ys)
    };
    let ca = fit(&anchor)?;
    let ct = fit(&test)?;

    let (ulo, uhi) = (to_u(lo), to_u(hi));
    let avg = (integrate_cubic(&ct, ulo, uhi) - integrate_cubic(&ca, ulo, uhi)) / (uhi - ulo);
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}
