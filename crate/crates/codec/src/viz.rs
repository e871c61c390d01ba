//! Prediction diagnostics rendered as binary PPM images: per-scale blend
//! weight totals, dominant displacement fields on the optical-flow color
//! wheel, and prediction-only reconstructions with the residual zeroed.

use std::fs;
use std::path::{Path, PathBuf};

use envc_core::{Graph, Tensor};

use crate::config::SCALES;
use crate::error::{CodecError, Result};
use crate::frame::{crop_spatial, pad_to_multiple, Frame};
use crate::model::{Model, ModelKind};
use crate::pipeline::PAD_MULTIPLE;
use crate::warp::{flow_channels, identity_grid, predict_feature};

/// Writes a binary PPM (P6). `rgb` is interleaved, row-major.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(CodecError::dimension(format!(
            "ppm buffer holds {} bytes, {}x{} needs {}",
            rgb.len(),
            width,
            height,
            width * height * 3
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    fs::write(path, out)?;
    Ok(())
}

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
const WHEEL_COLS: usize = RY + YG + GC + CB + BM + MR;

fn color_wheel() -> [[f64; 3]; WHEEL_COLS] {
    let mut wheel = [[0.0f64; 3]; WHEEL_COLS];
    let mut k = 0;
    for i in 0..RY {
        wheel[k] = [255.0, 255.0 * i as f64 / RY as f64, 0.0];
        k += 1;
    }
    for i in 0..YG {
        wheel[k] = [255.0 - 255.0 * i as f64 / YG as f64, 255.0, 0.0];
        k += 1;
    }
    for i in 0..GC {
        wheel[k] = [0.0, 255.0, 255.0 * i as f64 / GC as f64];
        k += 1;
    }
    for i in 0..CB {
        wheel[k] = [0.0, 255.0 - 255.0 * i as f64 / CB as f64, 255.0];
        k += 1;
    }
    for i in 0..BM {
        wheel[k] = [255.0 * i as f64 / BM as f64, 0.0, 255.0];
        k += 1;
    }
    for i in 0..MR {
        wheel[k] = [255.0, 0.0, 255.0 - 255.0 * i as f64 / MR as f64];
        k += 1;
    }
    wheel
}

/// Standard optical-flow color coding of the displacement `(u, v)`, with
/// magnitudes pre-normalized by `max_rad`. Zero flow maps to white.
pub fn flow_color(u: f64, v: f64, max_rad: f64) -> [u8; 3] {
    let wheel = color_wheel();
    let scale = if max_rad > 1e-12 { max_rad } else { 1.0 };
    let (u, v) = (u / scale, v / scale);
    let rad = (u * u + v * v).sqrt();
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (WHEEL_COLS as f64 - 1.0);
    let k0 = (fk.floor() as usize).min(WHEEL_COLS - 1);
    let k1 = (k0 + 1) % WHEEL_COLS;
    let f = fk - k0 as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        let col0 = wheel[k0][c] / 255.0;
        let col1 = wheel[k1][c] / 255.0;
        let mut col = (1.0 - f) * col0 + f * col1;
        if rad <= 1.0 {
            col = 1.0 - rad * (1.0 - col);
        } else {
            col *= 0.75;
        }
        rgb[c] = (col * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    rgb
}

/// Numbers the dump reports alongside the image files.
#[derive(Clone, Debug)]
pub struct VizReport {
    pub files: Vec<PathBuf>,
    /// Min and max over positions of the pre-normalization weight total
    /// summed across every head, scale, and sample (equals the head count
    /// up to float error).
    pub weight_sum_range: (f64, f64),
    /// Largest displacement magnitude per scale, the flow-image
    /// normalization constants.
    pub max_flow: Vec<f64>,
    /// Mean absolute 8-bit difference between the full prediction-only
    /// frame and the scale-1-only one.
    pub prediction_scale_gap: f64,
}

fn gray_ppm(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    let mut rgb = Vec::with_capacity(width * height * 3);
    for &v in values {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        rgb.extend_from_slice(&[g, g, g]);
    }
    write_ppm(path, width, height, &rgb)
}

fn frame_ppm(path: &Path, frame: &Frame) -> Result<()> {
    let (w, h) = (frame.width(), frame.height());
    let mut rgb = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                rgb.push(frame.sample(c, x, y));
            }
        }
    }
    write_ppm(path, w, h, &rgb)
}

fn mean_abs_diff(a: &Frame, b: &Frame) -> f64 {
    let pa = a.planes();
    let pb = b.planes();
    let sum: f64 = pa
        .iter()
        .zip(pb)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    sum / pa.len() as f64
}

fn emit(x: &Tensor<f32>, width: usize, height: usize) -> Result<Frame> {
    Frame::from_tensor(&crop_spatial(x, height, width)?)
}

/// Runs one P-frame prediction of `current` from `reference` with hard
/// motion rounding and writes the diagnostic images into `out_dir`. Works
/// on any checkpoint, trained or not.
pub fn dump_visualizations(
    model: &Model,
    reference: &Frame,
    current: &Frame,
    out_dir: &Path,
) -> Result<VizReport> {
    if reference.width() != current.width() || reference.height() != current.height() {
        return Err(CodecError::dimension(format!(
            "frame pair dimensions differ: {}x{} vs {}x{}",
            reference.width(),
            reference.height(),
            current.width(),
            current.height()
        )));
    }
    fs::create_dir_all(out_dir)?;
    match model.kind {
        ModelKind::CrossScale => cross_scale_viz(model, reference, current, out_dir),
        ModelKind::PixelLevel => pixel_viz(model, reference, current, out_dir),
    }
}

fn cross_scale_viz(
    model: &Model,
    reference: &Frame,
    current: &Frame,
    out_dir: &Path,
) -> Result<VizReport> {
    let (width, height) = (reference.width(), reference.height());
    let xr = pad_to_multiple(&reference.to_tensor::<f32>(), PAD_MULTIPLE)?;
    let xt = pad_to_multiple(&current.to_tensor::<f32>(), PAD_MULTIPLE)?;

    let mut g = Graph::<f32>::new();
    let p = model.bind_frozen(&mut g);
    let xrv = g.constant(xr);
    let xtv = g.constant(xt);
    let f_ref = model.features(&mut g, &p, xrv)?;
    let f_t = model.features(&mut g, &p, xtv)?;
    let y_m = model.motion_analysis(&mut g, &p, f_ref, f_t)?;
    let v_m = g.round_detached(y_m);
    let m_t = model.motion_synthesis(&mut g, &p, v_m)?;

    let full = predict_feature(model, &mut g, &p, f_ref, m_t, &[true; SCALES])?;
    let ap_full = model.align_predicted(&mut g, &p, full.feature)?;
    let x_full = model.upsample(&mut g, &p, ap_full)?;
    let only1 = predict_feature(model, &mut g, &p, f_ref, m_t, &[true, false, false])?;
    let ap_only1 = model.align_predicted(&mut g, &p, only1.feature)?;
    let x_only1 = model.upsample(&mut g, &p, ap_only1)?;

    let samples = model.cfg.samples_per_scale;
    let heads = model.cfg.heads;
    let weights: Vec<&Tensor<f32>> = full.head_weights.iter().map(|&v| g.value(v)).collect();
    let field = g.value(full.field);
    let (_, _, h2, w2) = field.dims4().map_err(CodecError::from)?;

    let mut files = Vec::new();
    let mut max_flow = Vec::with_capacity(SCALES);

    let mut sum_min = f64::INFINITY;
    let mut sum_max = f64::NEG_INFINITY;
    for y in 0..h2 {
        for x in 0..w2 {
            let mut total = 0.0;
            for wt in &weights {
                for c in 0..SCALES * samples {
                    total += wt.at4(0, c, y, x) as f64;
                }
            }
            sum_min = sum_min.min(total);
            sum_max = sum_max.max(total);
        }
    }

    for s in 0..SCALES {
        let mut totals = vec![0.0f64; h2 * w2];
        let mut flow_uv = vec![(0.0f64, 0.0f64); h2 * w2];
        let mut best = vec![f64::NEG_INFINITY; h2 * w2];
        for y in 0..h2 {
            for x in 0..w2 {
                let at = y * w2 + x;
                for (hd, wt) in weights.iter().enumerate() {
                    for n in 0..samples {
                        let w = wt.at4(0, s * samples + n, y, x) as f64;
                        totals[at] += w;
                        if w > best[at] {
                            best[at] = w;
                            let (fx, fy) = flow_channels(hd, s, n, samples);
                            flow_uv[at] = (
                                field.at4(0, fx, y, x) as f64,
                                field.at4(0, fy, y, x) as f64,
                            );
                        }
                    }
                }
            }
        }

        let path = out_dir.join(format!("weights_scale{}.ppm", s + 1));
        let normalized: Vec<f64> = totals.iter().map(|&t| t / heads as f64).collect();
        gray_ppm(&path, &normalized, w2, h2)?;
        files.push(path);

        let rad_max = flow_uv
            .iter()
            .map(|(u, v)| (u * u + v * v).sqrt())
            .fold(0.0f64, f64::max);
        max_flow.push(rad_max);
        let mut rgb = Vec::with_capacity(h2 * w2 * 3);
        for &(u, v) in &flow_uv {
            rgb.extend_from_slice(&flow_color(u, v, rad_max));
        }
        let path = out_dir.join(format!("flow_scale{}.ppm", s + 1));
        write_ppm(&path, w2, h2, &rgb)?;
        files.push(path);
    }

    let full_frame = emit(g.value(x_full), width, height)?;
    let only1_frame = emit(g.value(x_only1), width, height)?;
    let path = out_dir.join("prediction_full.ppm");
    frame_ppm(&path, &full_frame)?;
    files.push(path);
    let path = out_dir.join("prediction_scale1.ppm");
    frame_ppm(&path, &only1_frame)?;
    files.push(path);

    let gap = mean_abs_diff(&full_frame, &only1_frame);
    let report = VizReport {
        files,
        weight_sum_range: (sum_min, sum_max),
        max_flow,
        prediction_scale_gap: gap,
    };
    write_sidecar(out_dir, model, &report)?;
    Ok(report)
}

fn pixel_viz(
    model: &Model,
    reference: &Frame,
    current: &Frame,
    out_dir: &Path,
) -> Result<VizReport> {
    let (width, height) = (reference.width(), reference.height());
    let xr = pad_to_multiple(&reference.to_tensor::<f32>(), PAD_MULTIPLE)?;
    let xt = pad_to_multiple(&current.to_tensor::<f32>(), PAD_MULTIPLE)?;

    let mut g = Graph::<f32>::new();
    let p = model.bind_frozen(&mut g);
    let xrv = g.constant(xr);
    let xtv = g.constant(xt);
    let y_m = model.motion_analysis(&mut g, &p, xrv, xtv)?;
    let v_m = g.round_detached(y_m);
    let flow = model.motion_synthesis(&mut g, &p, v_m)?;
    let (b, _, hp, wp) = g.value(xrv).dims4().map_err(CodecError::from)?;
    let base = g.constant(identity_grid::<f32>(b, hp, wp, 0));
    let coords = g.add(base, flow)?;
    let warped = g.grid_sample(xrv, coords)?;

    let flow_t = g.value(flow);
    let mut flow_uv = Vec::with_capacity(hp * wp);
    for y in 0..hp {
        for x in 0..wp {
            flow_uv.push((flow_t.at4(0, 0, y, x) as f64, flow_t.at4(0, 1, y, x) as f64));
        }
    }
    let rad_max = flow_uv
        .iter()
        .map(|(u, v)| (u * u + v * v).sqrt())
        .fold(0.0f64, f64::max);
    let mut rgb = Vec::with_capacity(hp * wp * 3);
    for &(u, v) in &flow_uv {
        rgb.extend_from_slice(&flow_color(u, v, rad_max));
    }

    let mut files = Vec::new();
    let path = out_dir.join("flow_scale1.ppm");
    write_ppm(&path, wp, hp, &rgb)?;
    files.push(path);
    let path = out_dir.join("prediction_full.ppm");
    frame_ppm(&path, &emit(g.value(warped), width, height)?)?;
    files.push(path);

    let report = VizReport {
        files,
        weight_sum_range: (0.0, 0.0),
        max_flow: vec![rad_max],
        prediction_scale_gap: 0.0,
    };
    write_sidecar(out_dir, model, &report)?;
    Ok(report)
}

fn write_sidecar(out_dir: &Path, model: &Model, report: &VizReport) -> Result<()> {
    let mut text = String::new();
    text.push_str("flow images use the standard optical-flow color wheel;\n");
    text.push_str("displacements are backward flows in source-scale pixels,\n");
    text.push_str("x right, y down, normalized per image by max_flow below.\n");
    text.push_str("weight images are head-summed blend weights over heads\n");
    text.push_str("(white = every head concentrated on that scale).\n\n");
    text.push_str(&format!("model_kind={}\n", model.kind.name()));
    text.push_str(&format!("heads={}\n", model.cfg.heads));
    text.push_str(&format!("samples_per_scale={}\n", model.cfg.samples_per_scale));
    for (i, m) in report.max_flow.iter().enumerate() {
        text.push_str(&format!("max_flow_scale{}={m:.6}\n", i + 1));
    }
    text.push_str(&format!(
        "weight_sum_min={:.6}\nweight_sum_max={:.6}\n",
        report.weight_sum_range.0, report.weight_sum_range.1
    ));
    text.push_str(&format!(
        "prediction_scale_gap={:.6}\n",
        report.prediction_scale_gap
    ));
    for f in &report.files {
        text.push_str(&format!("file={}\n", f.display()));
    }
    fs::write(out_dir.join("viz.txt"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetConfig;
    use crate::model::build_model;
    use crate::synth::{gen_synthetic, SynthKind, SyntheticSpec};

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

    fn pair(kind: SynthKind, seed: u64) -> (Frame, Frame) {
        let spec = SyntheticSpec::new(kind, 64, 64, 2, seed);
        let mut frames = gen_synthetic(&spec).unwrap().frames;
        let b = frames.pop().unwrap();
        let a = frames.pop().unwrap();
        (a, b)
    }

    #[test]
    fn ppm_writer_emits_valid_header_and_payload() {
        let dir = std::env::temp_dir().join("envc_viz_ppm_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.ppm");
        write_ppm(&path, 2, 3, &[10u8; 18]).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n2 3\n255\n"));
        assert_eq!(bytes.len(), b"P6\n2 3\n255\n".len() + 18);
        assert!(write_ppm(&path, 2, 3, &[0u8; 10]).is_err());
    }

    #[test]
    fn zero_flow_renders_neutral_white() {
        assert_eq!(flow_color(0.0, 0.0, 0.0), [255, 255, 255]);
        assert_eq!(flow_color(0.0, 0.0, 5.0), [255, 255, 255]);
        // Distinct directions get distinct colors at full saturation.
        let right = flow_color(1.0, 0.0, 1.0);
        let left = flow_color(-1.0, 0.0, 1.0);
        let up = flow_color(0.0, -1.0, 1.0);
        assert_ne!(right, left);
        assert_ne!(right, up);
    }

    #[test]
    fn weight_sums_equal_head_count_on_a_fresh_model() {
        let model = build_model(crate::model::ModelKind::CrossScale, &tiny_cfg(), 99).unwrap();
        let (a, b) = pair(SynthKind::Translate, 5);
        let dir = std::env::temp_dir().join("envc_viz_cross_test");
        let report = dump_visualizations(&model, &a, &b, &dir).unwrap();
        let heads = tiny_cfg().heads as f64;
        assert!(
            (report.weight_sum_range.0 - heads).abs() < 1e-5,
            "min {}",
            report.weight_sum_range.0
        );
        assert!(
            (report.weight_sum_range.1 - heads).abs() < 1e-5,
            "max {}",
            report.weight_sum_range.1
        );
        // 3 weight maps + 3 flow maps + 2 predictions, plus the sidecar.
        assert_eq!(report.files.len(), 8);
        for f in &report.files {
            assert!(f.exists(), "{} missing", f.display());
        }
        assert!(dir.join("viz.txt").exists());
    }

    #[test]
    fn fresh_model_flows_are_zero_and_white() {
        // The sampling projection is zero-initialized, so every dominant
        // displacement is zero and the flow images are all white.
        let model = build_model(crate::model::ModelKind::CrossScale, &tiny_cfg(), 7).unwrap();
        let (a, b) = pair(SynthKind::FastTranslate, 11);
        let dir = std::env::temp_dir().join("envc_viz_flow_test");
        let report = dump_visualizations(&model, &a, &b, &dir).unwrap();
        assert!(report.max_flow.iter().all(|&m| m == 0.0));
        for s in 1..=SCALES {
            let bytes = fs::read(dir.join(format!("flow_scale{s}.ppm"))).unwrap();
            let header = "P6\n32 32\n255\n";
            assert!(bytes.starts_with(header.as_bytes()));
            assert!(bytes[header.len()..].iter().all(|&b| b == 255));
        }
    }

    #[test]
    fn pixel_mode_emits_flow_and_prediction() {
        let model = build_model(crate::model::ModelKind::PixelLevel, &tiny_cfg(), 13).unwrap();
        let (a, b) = pair(SynthKind::Occluder, 17);
        let dir = std::env::temp_dir().join("envc_viz_pixel_test");
        let report = dump_visualizations(&model, &a, &b, &dir).unwrap();
        assert_eq!(report.files.len(), 2);
        assert!(dir.join("flow_scale1.ppm").exists());
        assert!(dir.join("prediction_full.ppm").exists());
    }

    #[test]
    fn mismatched_frame_pair_is_rejected() {
        let model = build_model(crate::model::ModelKind::CrossScale, &tiny_cfg(), 1).unwrap();
        let (a, _) = pair(SynthKind::Translate, 3);
        let small = Frame::new(32, 32).unwrap();
        let dir = std::env::temp_dir().join("envc_viz_err_test");
        assert!(dump_visualizations(&model, &a, &small, &dir).is_err());
    }
}
