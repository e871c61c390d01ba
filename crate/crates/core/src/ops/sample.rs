//! Bilinear grid sampling with clamp-to-edge boundary handling.
//!
//! Coordinates are absolute source-pixel positions: `coords[b,0,h,w]` is the
//! x (column) position and `coords[b,1,h,w]` the y (row) position. Positions
//! outside the source are clamped to the border before interpolation, so the
//! sampled value saturates at the edge and its derivative with respect to the
//! coordinate is zero strictly outside the image.

use crate::error::CoreError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-position interpolation data: corner indices and fractional weights.
#[derive(Clone, Copy)]
struct Taps {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    // Whether the raw coordinate was strictly inside [0, size-1]; if not,
    // moving it locally does not change the sample.
    dx_live: bool,
    dy_live: bool,
}

fn clamp_coord(v: f64, max: f64) -> f64 {
    // NaN maps to 0 (max(NaN, 0) = 0), infinities to the nearest edge.
    v.max(0.0).min(max)
}

fn taps(xr: f64, yr: f64, ws: usize, hs: usize) -> Taps {
    let xmax = (ws - 1) as f64;
    let ymax = (hs - 1) as f64;
    let cx = clamp_coord(xr, xmax);
    let cy = clamp_coord(yr, ymax);
    let x0 = cx.floor();
    let y0 = cy.floor();
    let fx = cx - x0;
    let fy = cy - y0;
    let x0i = x0 as usize;
    let y0i = y0 as usize;
    Taps {
        x0: x0i,
        x1: (x0i + 1).min(ws - 1),
        y0: y0i,
        y1: (y0i + 1).min(hs - 1),
        fx,
        fy,
        dx_live: xr > 0.0 && xr < xmax,
        dy_live: yr > 0.0 && yr < ymax,
    }
}

fn check_shapes<T: Scalar>(src: &Tensor<T>, coords: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize, usize), CoreError> {
    let (b, c, hs, ws) = src.dims4().map_err(|_| {
        CoreError::shape("grid_sample", format!("source must be rank 4, got {:?}", src.shape()))
    })?;
    let (bc, two, ht, wt) = coords.dims4().map_err(|_| {
        CoreError::shape("grid_sample", format!("coords must be rank 4, got {:?}", coords.shape()))
    })?;
    if bc != b {
        return Err(CoreError::shape(
            "grid_sample",
            format!("coords batch {bc} does not match source batch {b}"),
        ));
    }
    if two != 2 {
        return Err(CoreError::shape(
            "grid_sample",
            format!("coords must have 2 channels (x, y), got {two}"),
        ));
    }
    Ok((b, c, hs, ws, ht, wt))
}

pub fn grid_sample_fwd<T: Scalar>(src: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
    let (b, c, hs, ws, ht, wt) = check_shapes(src, coords)?;
    let mut out = Tensor::zeros(&[b, c, ht, wt]);
    let sd = src.data();
    let cd = coords.data();
    let od = out.data_mut();
    let npos = ht * wt;
    let mut tap_buf: Vec<Taps> = Vec::with_capacity(npos);
    for bi in 0..b {
        tap_buf.clear();
        let cbase = bi * 2 * npos;
        for p in 0..npos {
            let xr = cd[cbase + p].to_f64_lossy();
            let yr = cd[cbase + npos + p].to_f64_lossy();
            tap_buf.push(taps(xr, yr, ws, hs));
        }
        for ci in 0..c {
            let sbase = ((bi * c + ci) * hs) * ws;
            let obase = ((bi * c + ci) * ht) * wt;
            for (p, t) in tap_buf.iter().enumerate() {
                let v00 = sd[sbase + t.y0 * ws + t.x0].to_f64_lossy();
                let v01 = sd[sbase + t.y0 * ws + t.x1].to_f64_lossy();
                let v10 = sd[sbase + t.y1 * ws + t.x0].to_f64_lossy();
                let v11 = sd[sbase + t.y1 * ws + t.x1].to_f64_lossy();
                let top = v00 + t.fx * (v01 - v00);
                let bot = v10 + t.fx * (v11 - v10);
                od[obase + p] = T::lit(top + t.fy * (bot - top));
            }
        }
    }
    Ok(out)
}

pub fn grid_sample_bwd<T: Scalar>(
    src: &Tensor<T>,
    coords: &Tensor<T>,
    gout: &Tensor<T>,
    want_src: bool,
    want_coords: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (b, c, hs, ws) = src.dims4().expect("src rank");
    let (_, _, ht, wt) = gout.dims4().expect("gout rank");
    let sd = src.data();
    let cd = coords.data();
    let gd = gout.data();
    let npos = ht * wt;

    let mut gsrc = want_src.then(|| Tensor::zeros(src.shape()));
    let mut gcoords = want_coords.then(|| Tensor::zeros(coords.shape()));

    let mut tap_buf: Vec<Taps> = Vec::with_capacity(npos);
    for bi in 0..b {
        tap_buf.clear();
        let cbase = bi * 2 * npos;
        for p in 0..npos {
            let xr = cd[cbase + p].to_f64_lossy();
            let yr = cd[cbase + npos + p].to_f64_lossy();
            tap_buf.push(taps(xr, yr, ws, hs));
        }
        for ci in 0..c {
            let sbase = ((bi * c + ci) * hs) * ws;
            let obase = ((bi * c + ci) * ht) * wt;
            for (p, t) in tap_buf.iter().enumerate() {
                let g = gd[obase + p].to_f64_lossy();
                if let Some(gs) = gsrc.as_mut() {
                    let gsd = gs.data_mut();
                    let w00 = (1.0 - t.fy) * (1.0 - t.fx);
                    let w01 = (1.0 - t.fy) * t.fx;
                    let w10 = t.fy * (1.0 - t.fx);
                    let w11 = t.fy * t.fx;
                    gsd[sbase + t.y0 * ws + t.x0] += T::lit(g * w00);
                    gsd[sbase + t.y0 * ws + t.x1] += T::lit(g * w01);
                    gsd[sbase + t.y1 * ws + t.x0] += T::lit(g * w10);
                    gsd[sbase + t.y1 * ws + t.x1] += T::lit(g * w11);
                }
                if let Some(gc) = gcoords.as_mut() {
                    let v00 = sd[sbase + t.y0 * ws + t.x0].to_f64_lossy();
                    let v01 = sd[sbase + t.y0 * ws + t.x1].to_f64_lossy();
                    let v10 = sd[sbase + t.y1 * ws + t.x0].to_f64_lossy();
                    let v11 = sd[sbase + t.y1 * ws + t.x1].to_f64_lossy();
                    let gcd = gc.data_mut();
                    if t.dx_live {
                        let dvdx = (1.0 - t.fy) * (v01 - v00) + t.fy * (v11 - v10);
                        gcd[cbase + p] += T::lit(g * dvdx);
                    }
                    if t.dy_live {
                        let dvdy = (1.0 - t.fx) * (v10 - v00) + t.fx * (v11 - v01);
                        gcd[cbase + npos + p] += T::lit(g * dvdy);
                    }
                }
            }
        }
    }
    (gsrc, gcoords)
}
