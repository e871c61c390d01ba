//! Cross-scale warped prediction: every position of the predicted feature
//! samples all three pyramid levels of the reference at learned offsets and
//! blends the taps with a joint softmax over (scale, sample), separately per
//! head group of channels.

use envc_core::{Graph, Scalar, Tensor, VarId};

use crate::config::SCALES;
use crate::error::{CodecError, Result};
use crate::layers::Bound;
use crate::model::Model;

/// Additive logit penalty for a disabled scale. Large enough that the
/// softmax weight underflows to an exact zero in both f32 and f64, which
/// makes skipping the disabled taps bit-identical to computing them.
pub const MASK_PENALTY: f64 = -1e9;

/// Per-head channel block width of the sampling field:
/// `3 scales * samples * (2 offsets + 1 logit)`.
pub fn head_field_channels(samples: usize) -> usize {
    9 * samples
}

/// Channel indices (x, y) of one sampling offset within the whole field.
pub fn flow_channels(head: usize, scale: usize, sample: usize, samples: usize) -> (usize, usize) {
    let base = head * head_field_channels(samples) + (scale * samples + sample) * 2;
    (base, base + 1)
}

/// Channel index of one blend logit within the whole field.
pub fn logit_channel(head: usize, scale: usize, sample: usize, samples: usize) -> usize {
    head * head_field_channels(samples) + 6 * samples + scale * samples + sample
}

/// Identity coordinates of the target grid expressed in level-`scale`
/// pixels; learned offsets are added on top.
pub fn identity_grid<T: Scalar>(b: usize, h: usize, w: usize, scale: usize) -> Tensor<T> {
    let div = (1usize << scale) as f64;
    let mut t = Tensor::zeros(&[b, 2, h, w]);
    let plane = h * w;
    let d = t.data_mut();
    for bi in 0..b {
        let at = bi * 2 * plane;
        for y in 0..h {
            for x in 0..w {
                d[at + y * w + x] = T::lit(x as f64 / div);
                d[at + plane + y * w + x] = T::lit(y as f64 / div);
            }
        }
    }
    t
}

fn mask_tensor<T: Scalar>(b: usize, samples: usize, h: usize, w: usize, mask: &[bool; SCALES]) -> Tensor<T> {
    let mut t = Tensor::zeros(&[b, SCALES * samples, h, w]);
    let plane = h * w;
    let d = t.data_mut();
    for bi in 0..b {
        for s in 0..SCALES {
            if mask[s] {
                continue;
            }
            for n in 0..samples {
                let at = (bi * SCALES * samples + s * samples + n) * plane;
                d[at..at + plane].fill(T::lit(MASK_PENALTY));
            }
        }
    }
    t
}

/// Result of a prediction pass; the per-head blend weights and the raw
/// sampling field are kept for diagnostics and visualization.
pub struct Prediction {
    pub feature: VarId,
    /// One `[B, 3*samples, H/2, W/2]` tensor per head, post-softmax.
    pub head_weights: Vec<VarId>,
    /// Raw projection output `[B, heads*9*samples, H/2, W/2]`; flow pairs
    /// live at the channels `flow_channels` names.
    pub field: VarId,
}

/// Predicts the current frame feature from the reference feature `f_ref`
/// and decoded motion information `m_t`. `mask` disables whole scales;
/// their taps are skipped and their blend weight is exactly zero.
pub fn predict_feature<T: Scalar>(
    model: &Model,
    g: &mut Graph<T>,
    p: &Bound,
    f_ref: VarId,
    m_t: VarId,
    mask: &[bool; SCALES],
) -> Result<Prediction> {
    if !mask.iter().any(|&m| m) {
        return Err(CodecError::config("at least one prediction scale must stay enabled"));
    }
    let cross = model
        .cross
        .as_ref()
        .ok_or_else(|| CodecError::config("cross-scale prediction requires a cross_scale model"))?;
    let cfg = &model.cfg;
    let samples = cfg.samples_per_scale;
    let group = cfg.head_group_channels();

    let pyr = model.pyramid(g, p, f_ref)?;
    let mut proj = [pyr[0]; SCALES];
    for s in 0..SCALES {
        proj[s] = cross.head_proj[s].forward(g, p, pyr[s])?;
    }

    let field = cross.sampling_proj.forward(g, p, m_t)?;
    let (b, fc, h2, w2) = g.value(field).dims4()?;
    debug_assert_eq!(fc, cfg.sampling_field_channels());

    let mask_const = g.constant(mask_tensor::<T>(b, samples, h2, w2, mask));
    let bases: Vec<VarId> =
        (0..SCALES).map(|s| g.constant(identity_grid::<T>(b, h2, w2, s))).collect();

    let mut head_outputs = Vec::with_capacity(cfg.heads);
    let mut head_weights = Vec::with_capacity(cfg.heads);
    for hd in 0..cfg.heads {
        let lo = logit_channel(hd, 0, 0, samples);
        let logits = g.slice_channels(field, lo, lo + SCALES * samples)?;
        let logits = g.add(logits, mask_const)?;
        let weights = g.softmax(logits, 1)?;
        head_weights.push(weights);

        let mut acc: Option<VarId> = None;
        for s in 0..SCALES {
            if !mask[s] {
                continue;
            }
            let level = g.slice_channels(proj[s], hd * group, (hd + 1) * group)?;
            for n in 0..samples {
                let (fx, _) = flow_channels(hd, s, n, samples);
                let flow = g.slice_channels(field, fx, fx + 2)?;
                let coords = g.add(bases[s], flow)?;
                let tap = g.grid_sample(level, coords)?;
                let wch = s * samples + n;
                let wmap = g.slice_channels(weights, wch, wch + 1)?;
                let weighted = g.mul_spatial(tap, wmap)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, weighted)?,
                    None => weighted,
                });
            }
        }
        head_outputs.push(acc.expect("an enabled scale exists"));
    }

    let cat = g.concat_channels(&head_outputs)?;
    let feature = cross.out_proj.forward(g, p, cat)?;
    Ok(Prediction {
        feature,
        head_weights,
        field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetConfig;
    use crate::model::{build_model, ModelKind};
    use envc_core::Rng;
    use std::collections::HashSet;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            iframe_n: 4,
            iframe_m: 6,
            motion_n: 4,
            motion_m: 5,
            residual_n: 4,
            residual_m: 6,
            feature_channels: 4,
            heads: 2,
            samples_per_scale: 2,
            gmm_components: 2,
        }
    }

    #[test]
    fn field_layout_is_a_partition() {
        let (heads, samples) = (2usize, 3usize);
        let mut seen = HashSet::new();
        for hd in 0..heads {
            for s in 0..SCALES {
                for n in 0..samples {
                    let (fx, fy) = flow_channels(hd, s, n, samples);
                    assert!(seen.insert(fx) && seen.insert(fy));
                    assert!(seen.insert(logit_channel(hd, s, n, samples)));
                }
            }
        }
        let total = heads * head_field_channels(samples);
        assert_eq!(seen.len(), total);
        assert_eq!(*seen.iter().max().unwrap(), total - 1);
    }

    fn rand_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor<f32> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| (rng.uniform() * 2.0 - 1.0) as f32 * scale as f32).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Clamp-to-edge bilinear lookup mirroring the graph sampler.
    fn bilinear(src: &Tensor<f32>, c: usize, xr: f64, yr: f64) -> f64 {
        let (_, cc, hs, ws) = src.dims4().unwrap();
        assert!(c < cc);
        let cx = xr.clamp(0.0, (ws - 1) as f64);
        let cy = yr.clamp(0.0, (hs - 1) as f64);
        let (x0, y0) = (cx.floor() as usize, cy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(ws - 1), (y0 + 1).min(hs - 1));
        let (fx, fy) = (cx - x0 as f64, cy - y0 as f64);
        let at = |y: usize, x: usize| src.data()[(c * hs + y) * ws + x] as f64;
        let top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
        let bot = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
        top + fy * (bot - top)
    }

    /// Model with a randomized (instead of zero) sampling projection, so
    /// offsets and logits take real values.
    fn randomized_model(seed: u64) -> crate::model::Model {
        let mut model = build_model(ModelKind::CrossScale, &tiny_cfg(), seed).unwrap();
        let mut rng = Rng::new(seed ^ 0xF1E1D);
        let cross = model.cross.as_ref().unwrap();
        let (w, b) = (cross.sampling_proj.w, cross.sampling_proj.b);
        for id in [w, b] {
            let shape = model.params.value(id).shape().to_vec();
            *model.params.value_mut(id) = rand_tensor(&mut rng, &shape, 0.8);
        }
        model
    }

    struct Setup {
        g: Graph<f32>,
        pred: Prediction,
        proj: Vec<Tensor<f32>>,
        field: Tensor<f32>,
        out_w: Tensor<f32>,
        out_b: Tensor<f32>,
    }

    fn run(seed: u64, mask: [bool; SCALES]) -> Setup {
        let model = randomized_model(seed);
        let cfg = model.cfg;
        let mut g = Graph::<f32>::new();
        let p = model.bind_frozen(&mut g);
        let mut rng = Rng::new(seed ^ 0x0A11CE);
        let f_ref = g.input(rand_tensor(&mut rng, &[1, cfg.feature_channels, 8, 8], 1.0));
        let m_t = g.input(rand_tensor(&mut rng, &[1, cfg.motion_info_channels(), 8, 8], 1.0));

        let pred = predict_feature(&model, &mut g, &p, f_ref, m_t, &mask).unwrap();

        let cross = model.cross.as_ref().unwrap();
        let pyr = model.pyramid(&mut g, &p, f_ref).unwrap();
        let proj: Vec<Tensor<f32>> = (0..SCALES)
            .map(|s| {
                let v = cross.head_proj[s].forward(&mut g, &p, pyr[s]).unwrap();
                g.value(v).clone()
            })
            .collect();
        let fv = cross.sampling_proj.forward(&mut g, &p, m_t).unwrap();
        let field = g.value(fv).clone();
        let out_w = model.params.value(cross.out_proj.w).clone();
        let out_b = model.params.value(cross.out_proj.b).clone();
        Setup { g, pred, proj, field, out_w, out_b }
    }

    /// Direct per-position evaluation of the blend, independent of the
    /// graph ops: softmax over (scale, sample) logits, clamp-to-edge
    /// bilinear taps, then the 1x1 output projection.
    fn oracle(setup: &Setup, cfg: &NetConfig, mask: [bool; SCALES]) -> Tensor<f32> {
        let samples = cfg.samples_per_scale;
        let group = cfg.head_group_channels();
        let cf = cfg.feature_channels;
        let (h, w) = (8usize, 8usize);
        let fd = setup.field.data();
        let plane = h * w;
        let at = |ch: usize, y: usize, x: usize| fd[ch * plane + y * w + x] as f64;

        let mut blended = vec![0.0f64; cf * plane];
        for hd in 0..cfg.heads {
            for y in 0..h {
                for x in 0..w {
                    let mut logits = Vec::new();
                    for s in 0..SCALES {
                        for n in 0..samples {
                            let raw = at(logit_channel(hd, s, n, samples), y, x);
                            logits.push(if mask[s] { raw } else { raw + MASK_PENALTY });
                        }
                    }
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
                    let denom: f64 = exps.iter().sum();
                    for s in 0..SCALES {
                        if !mask[s] {
                            continue;
                        }
                        let div = (1usize << s) as f64;
                        for n in 0..samples {
                            let wgt = exps[s * samples + n] / denom;
                            let (fx, fy) = flow_channels(hd, s, n, samples);
                            let xr = x as f64 / div + at(fx, y, x);
                            let yr = y as f64 / div + at(fy, y, x);
                            for cg in 0..group {
                                let tap = bilinear(&setup.proj[s], hd * group + cg, xr, yr);
                                blended[(hd * group + cg) * plane + y * w + x] += wgt * tap;
                            }
                        }
                    }
                }
            }
        }

        let wd = setup.out_w.data();
        let bd = setup.out_b.data();
        let mut out = Tensor::zeros(&[1, cf, h, w]);
        let od = out.data_mut();
        for co in 0..cf {
            for pix in 0..plane {
                let mut acc = bd[co] as f64;
                for ci in 0..cf {
                    acc += wd[co * cf + ci] as f64 * blended[ci * plane + pix];
                }
                od[co * plane + pix] = acc as f32;
            }
        }
        out
    }

    #[test]
    fn prediction_matches_brute_force_oracle() {
        let cfg = tiny_cfg();
        for (seed, mask) in
            [(21, [true, true, true]), (22, [true, false, false]), (23, [false, true, true])]
        {
            let setup = run(seed, mask);
            let expect = oracle(&setup, &cfg, mask);
            let got = setup.g.value(setup.pred.feature);
            assert_eq!(got.shape(), expect.shape());
            assert!(
                got.max_abs_diff(&expect) < 2e-4,
                "mask {mask:?}: diff {}",
                got.max_abs_diff(&expect)
            );
        }
    }

    #[test]
    fn blend_weights_sum_to_one_per_position() {
        let setup = run(31, [true, true, true]);
        let cfg = tiny_cfg();
        for wid in &setup.pred.head_weights {
            let t = setup.g.value(*wid);
            let (_, c, h, w) = t.dims4().unwrap();
            assert_eq!(c, SCALES * cfg.samples_per_scale);
            for y in 0..h {
                for x in 0..w {
                    let sum: f64 =
                        (0..c).map(|ch| t.data()[(ch * h + y) * w + x] as f64).sum();
                    assert!((sum - 1.0).abs() < 1e-5, "sum {sum} at ({y},{x})");
                }
            }
        }
    }

    #[test]
    fn masked_scale_weights_are_exactly_zero() {
        let mask = [true, false, true];
        let setup = run(41, mask);
        let cfg = tiny_cfg();
        let samples = cfg.samples_per_scale;
        for wid in &setup.pred.head_weights {
            let t = setup.g.value(*wid);
            let (_, _, h, w) = t.dims4().unwrap();
            for s in 0..SCALES {
                for n in 0..samples {
                    let ch = s * samples + n;
                    for pix in 0..h * w {
                        let v = t.data()[ch * h * w + pix];
                        if mask[s] {
                            assert!(v > 0.0);
                        } else {
                            assert_eq!(v.to_bits(), 0.0f32.to_bits());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fresh_model_blends_uniformly() {
        let cfg = tiny_cfg();
        let model = build_model(ModelKind::CrossScale, &cfg, 51).unwrap();
        let mut g = Graph::<f32>::new();
        let p = model.bind_frozen(&mut g);
        let mut rng = Rng::new(7);
        let f_ref = g.input(rand_tensor(&mut rng, &[1, cfg.feature_channels, 8, 8], 1.0));
        let m_t = g.input(rand_tensor(&mut rng, &[1, cfg.motion_info_channels(), 8, 8], 1.0));
        let pred = predict_feature(&model, &mut g, &p, f_ref, m_t, &[true, true, true]).unwrap();
        let uniform = 1.0 / (SCALES * cfg.samples_per_scale) as f64;
        for wid in &pred.head_weights {
            for &v in g.value(*wid).data() {
                assert!((v as f64 - uniform).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rejects_fully_masked_prediction() {
        let model = randomized_model(61);
        let mut g = Graph::<f32>::new();
        let p = model.bind_frozen(&mut g);
        let f_ref = g.input(Tensor::zeros(&[1, 4, 8, 8]));
        let m_t = g.input(Tensor::zeros(&[1, 4, 8, 8]));
        assert!(predict_feature(&model, &mut g, &p, f_ref, m_t, &[false, false, false]).is_err());
    }

    #[test]
    fn gradients_reach_projection_parameters() {
        let model = randomized_model(71);
        let cfg = model.cfg;
        let mut g = Graph::<f32>::new();
        let p = model.bind(&mut g, |_| true);
        let mut rng = Rng::new(8);
        let f_ref = g.input(rand_tensor(&mut rng, &[1, cfg.feature_channels, 8, 8], 1.0));
        let m_t = g.input(rand_tensor(&mut rng, &[1, cfg.motion_info_channels(), 8, 8], 1.0));
        let pred = predict_feature(&model, &mut g, &p, f_ref, m_t, &[true, true, true]).unwrap();
        let loss = g.mean_all(pred.feature).unwrap();
        g.backward(loss).unwrap();

        let cross = model.cross.as_ref().unwrap();
        for (label, pid) in [
            ("sampling_proj.w", cross.sampling_proj.w),
            ("out_proj.w", cross.out_proj.w),
            ("head_proj0.w", cross.head_proj[0].w),
            ("l1_proj.w", cross.l1_proj.w),
        ] {
            let grad = g.grad(p.var(pid)).unwrap_or_else(|| panic!("no grad for {label}"));
            let mag: f64 = grad.data().iter().map(|&v| (v as f64).abs()).sum();
            assert!(mag > 0.0, "zero grad for {label}");
        }
    }
}
