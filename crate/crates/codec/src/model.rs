//! Network definitions: the three autoencoders (I-frame, motion, residual),
//! their entropy-model parameters, and the cross-scale prediction modules.
//!
//! Parameter group names double as the freeze-mask vocabulary of the
//! training schedule and as checkpoint section names:
//! `i_frame.{g_a,g_s,h_a,h_s}`, `motion.{g_a,g_s}`,
//! `residual.{g_a,g_s,h_a,h_s}`, `feature_extractor`,
//! `multi_scale_extractor`, `sampling_projection`, `output_projection`,
//! `align_blocks`, `final_upsampler`. Entropy densities live with the
//! decoder-side group that is tuned alongside them (`h_s` for hyper-coded
//! latents, `motion.g_s` for motion).

use envc_core::{CoreError, Graph, Rng, Scalar, VarId};

use crate::config::NetConfig;
use crate::entropy::gmm::{causal_mask, CONTEXT_KERNEL};
use crate::error::Result;
use crate::layers::{
    conv, deconv, fcdf, res_unit, Bound, ConvDef, FcdfDef, Init, ParamSet, ResUnitDef,
    LRELU_SLOPE,
};

/// Group-of-pictures member kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Intra,
    Predicted,
}

/// Prediction architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Feature-space coding with cross-scale prediction (the main pipeline).
    CrossScale,
    /// Ablation baseline: full-resolution optical flow, pixel-space warp,
    /// pixel residual, no refinement network.
    PixelLevel,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CrossScale => "cross_scale",
            ModelKind::PixelLevel => "pixel_level",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cross_scale" => Some(ModelKind::CrossScale),
            "pixel_level" => Some(ModelKind::PixelLevel),
            _ => None,
        }
    }
}

/// One encoder stage: stride-2 convolution, optionally followed by a
/// resblock unit (absent after the terminal latent-producing layer).
#[derive(Debug, Clone)]
pub struct EncStep {
    pub conv: ConvDef,
    pub rb: Option<ResUnitDef>,
}

/// One decoder stage: stride-2 transposed convolution plus optional unit.
#[derive(Debug, Clone)]
pub struct DecStep {
    pub deconv: ConvDef,
    pub rb: Option<ResUnitDef>,
}

/// Mirrored stack of down/up-sampling stages.
#[derive(Debug, Clone)]
pub struct AutoencoderDef {
    pub enc: Vec<EncStep>,
    pub dec: Vec<DecStep>,
}

impl AutoencoderDef {
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        mut x: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        for step in &self.enc {
            x = step.conv.forward(g, p, x)?;
            if let Some(rb) = &step.rb {
                x = rb.forward(g, p, x)?;
            }
        }
        Ok(x)
    }

    pub fn decode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        mut y: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        for step in &self.dec {
            y = step.deconv.forward(g, p, y)?;
            if let Some(rb) = &step.rb {
                y = rb.forward(g, p, y)?;
            }
        }
        Ok(y)
    }

    pub fn depth(&self) -> usize {
        self.enc.len()
    }
}

/// Builds a mirrored autoencoder: `depth` stride-2 stages, hidden width
/// `n`, latent width `m`, decoder emitting `c_out` channels.
fn autoencoder(
    ps: &mut ParamSet,
    rng: &mut Rng,
    enc_group: &str,
    dec_group: &str,
    c_in: usize,
    c_out: usize,
    n: usize,
    m: usize,
    depth: usize,
    zero_final_dec: bool,
) -> AutoencoderDef {
    let mut enc = Vec::with_capacity(depth);
    for i in 0..depth {
        let cin = if i == 0 { c_in } else { n };
        let last = i == depth - 1;
        let cout = if last { m } else { n };
        let cv = conv(ps, rng, enc_group, &format!("down{i}"), cin, cout, 3, 2, 1, Init::FanIn);
        let rb = (!last).then(|| res_unit(ps, rng, enc_group, &format!("down{i}.rbs"), n));
        enc.push(EncStep { conv: cv, rb });
    }
    let mut dec = Vec::with_capacity(depth);
    for i in 0..depth {
        let cin = if i == 0 { m } else { n };
        let last = i == depth - 1;
        let cout = if last { c_out } else { n };
        let init = if last && zero_final_dec { Init::Zero } else { Init::FanIn };
        let dv = deconv(ps, rng, dec_group, &format!("up{i}"), cin, cout, 4, 2, 1, init);
        let rb = (!last).then(|| res_unit(ps, rng, dec_group, &format!("up{i}.rbs"), n));
        dec.push(DecStep { deconv: dv, rb });
    }
    AutoencoderDef { enc, dec }
}

/// Hyperprior: encoder shrinks the latent by 4x, decoder predicts per-
/// element (mean, raw scale) for the main latent; the hyper-latent itself
/// is coded with a factorized density.
#[derive(Debug, Clone)]
pub struct HyperDef {
    a1: ConvDef,
    a2: ConvDef,
    a3: ConvDef,
    s1: ConvDef,
    s2: ConvDef,
    s3: ConvDef,
    pub density: FcdfDef,
    latent_channels: usize,
}

impl HyperDef {
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        y: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        let slope = T::lit(LRELU_SLOPE);
        let h = self.a1.forward(g, p, y)?;
        let h = g.leaky_relu(h, slope)?;
        let h = self.a2.forward(g, p, h)?;
        let h = g.leaky_relu(h, slope)?;
        self.a3.forward(g, p, h)
    }

    /// Decodes the hyper-latent into `(mu, raw_sigma)` for the main latent.
    pub fn decode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        z: VarId,
    ) -> std::result::Result<(VarId, VarId), CoreError> {
        let slope = T::lit(LRELU_SLOPE);
        let h = self.s1.forward(g, p, z)?;
        let h = g.leaky_relu(h, slope)?;
        let h = self.s2.forward(g, p, h)?;
        let h = g.leaky_relu(h, slope)?;
        let both = self.s3.forward(g, p, h)?;
        let m = self.latent_channels;
        let mu = g.slice_channels(both, 0, m)?;
        let raw_sigma = g.slice_channels(both, m, 2 * m)?;
        Ok((mu, raw_sigma))
    }
}

fn hyper(
    ps: &mut ParamSet,
    rng: &mut Rng,
    enc_group: &str,
    dec_group: &str,
    m: usize,
    n: usize,
) -> HyperDef {
    HyperDef {
        a1: conv(ps, rng, enc_group, "h1", m, n, 3, 1, 1, Init::FanIn),
        a2: conv(ps, rng, enc_group, "h2", n, n, 3, 2, 1, Init::FanIn),
        a3: conv(ps, rng, enc_group, "h3", n, n, 3, 2, 1, Init::FanIn),
        s1: deconv(ps, rng, dec_group, "u1", n, n, 4, 2, 1, Init::FanIn),
        s2: deconv(ps, rng, dec_group, "u2", n, n, 4, 2, 1, Init::FanIn),
        s3: conv(ps, rng, dec_group, "u3", n, 2 * m, 3, 1, 1, Init::FanIn),
        density: fcdf(ps, rng, dec_group, "z_density", n),
        latent_channels: m,
    }
}

#[derive(Debug, Clone)]
pub struct IFrameModel {
    pub ae: AutoencoderDef,
    pub hyper: HyperDef,
}

/// Masked-convolution context network emitting GMM parameters for the
/// motion latent (used when autoregressive coding is enabled).
#[derive(Debug, Clone)]
pub struct GmmCtxDef {
    pub c0: ConvDef,
    pub c1: ConvDef,
    pub c2: ConvDef,
    pub components: usize,
    latent_channels: usize,
}

impl GmmCtxDef {
    /// Graph-side context pass; returns `(pi_logits, mus, raw_sigmas)`,
    /// each `[B, K*C, H, W]` component-major.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        v: VarId,
    ) -> std::result::Result<(VarId, VarId, VarId), CoreError> {
        let slope = T::lit(LRELU_SLOPE);
        let wshape = g.value(p.var(self.c0.w)).shape().to_vec();
        let mask = causal_mask(wshape[0], wshape[1], CONTEXT_KERNEL).cast::<T>();
        let mask = g.constant(mask);
        let w0 = g.mul(p.var(self.c0.w), mask)?;
        let h = g.conv2d(v, w0, Some(p.var(self.c0.b)), 1, CONTEXT_KERNEL / 2)?;
        let h = g.leaky_relu(h, slope)?;
        let h = self.c1.forward(g, p, h)?;
        let h = g.leaky_relu(h, slope)?;
        let raw = self.c2.forward(g, p, h)?;
        let kc = self.components * self.latent_channels;
        let pi = g.slice_channels(raw, 0, kc)?;
        let mu = g.slice_channels(raw, kc, 2 * kc)?;
        let sig = g.slice_channels(raw, 2 * kc, 3 * kc)?;
        Ok((pi, mu, sig))
    }
}

#[derive(Debug, Clone)]
pub struct MotionModel {
    pub ae: AutoencoderDef,
    /// Factorized density over the motion latent (the non-AR path, also the
    /// discrete rate model of the motion hard-quantization stage).
    pub density: FcdfDef,
    pub ctx: GmmCtxDef,
}

#[derive(Debug, Clone)]
pub struct ResidualModel {
    pub ae: AutoencoderDef,
    pub hyper: HyperDef,
}

/// Frame-feature and prediction modules of the cross-scale pipeline.
#[derive(Debug, Clone)]
pub struct CrossScaleDef {
    pub feat_conv: ConvDef,
    pub feat_rb: ResUnitDef,
    pub l1_proj: ConvDef,
    pub down2_conv: ConvDef,
    pub down2_rb: ResUnitDef,
    pub down3_conv: ConvDef,
    pub down3_rb: ResUnitDef,
    pub head_proj: Vec<ConvDef>,
    pub sampling_proj: ConvDef,
    pub out_proj: ConvDef,
    pub align_cur: ResUnitDef,
    pub align_ref: ResUnitDef,
    pub up_rb: ResUnitDef,
    pub up_conv: ConvDef,
}

/// A complete parameterized codec model.
#[derive(Debug)]
pub struct Model {
    pub kind: ModelKind,
    pub cfg: NetConfig,
    pub params: ParamSet,
    pub iframe: IFrameModel,
    pub motion: MotionModel,
    pub residual: ResidualModel,
    pub cross: Option<CrossScaleDef>,
}

/// Builds a freshly initialized model. `seed` fixes every random draw.
pub fn build_model(kind: ModelKind, cfg: &NetConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut ps = ParamSet::new();
    let mut rng = Rng::new(seed ^ 0x0DE1_1153);

    let iframe = IFrameModel {
        ae: autoencoder(
            &mut ps,
            &mut rng,
            "i_frame.g_a",
            "i_frame.g_s",
            3,
            3,
            cfg.iframe_n,
            cfg.iframe_m,
            4,
            false,
        ),
        hyper: hyper(&mut ps, &mut rng, "i_frame.h_a", "i_frame.h_s", cfg.iframe_m, cfg.iframe_n),
    };

    let cf = cfg.feature_channels;
    let (motion_in, motion_out, residual_in, residual_out, cross) = match kind {
        ModelKind::CrossScale => {
            let cross = CrossScaleDef {
                feat_conv: conv(&mut ps, &mut rng, "feature_extractor", "down", 3, cf, 3, 2, 1, Init::FanIn),
                feat_rb: res_unit(&mut ps, &mut rng, "feature_extractor", "rbs", cf),
                l1_proj: conv(&mut ps, &mut rng, "multi_scale_extractor", "l1", cf, cf, 1, 1, 0, Init::FanIn),
                down2_conv: conv(&mut ps, &mut rng, "multi_scale_extractor", "l2.down", cf, cf, 3, 2, 1, Init::FanIn),
                down2_rb: res_unit(&mut ps, &mut rng, "multi_scale_extractor", "l2.rbs", cf),
                down3_conv: conv(&mut ps, &mut rng, "multi_scale_extractor", "l3.down", cf, cf, 3, 2, 1, Init::FanIn),
                down3_rb: res_unit(&mut ps, &mut rng, "multi_scale_extractor", "l3.rbs", cf),
                head_proj: (0..3)
                    .map(|s| {
                        conv(&mut ps, &mut rng, "multi_scale_extractor", &format!("heads.l{}", s + 1), cf, cf, 1, 1, 0, Init::FanIn)
                    })
                    .collect(),
                sampling_proj: conv(
                    &mut ps,
                    &mut rng,
                    "sampling_projection",
                    "proj",
                    cfg.motion_info_channels(),
                    cfg.sampling_field_channels(),
                    1,
                    1,
                    0,
                    Init::Zero,
                ),
                out_proj: conv(&mut ps, &mut rng, "output_projection", "proj", cf, cf, 1, 1, 0, Init::FanIn),
                align_cur: res_unit(&mut ps, &mut rng, "align_blocks", "cur", cf),
                align_ref: res_unit(&mut ps, &mut rng, "align_blocks", "ref", cf),
                up_rb: res_unit(&mut ps, &mut rng, "final_upsampler", "rbs", cf),
                up_conv: deconv(&mut ps, &mut rng, "final_upsampler", "up", cf, 3, 4, 2, 1, Init::FanIn),
            };
            (2 * cf, cfg.motion_info_channels(), cf, cf, Some(cross))
        }
        // Pixel level: motion eats the stacked frame pair and decodes a
        // 2-channel flow at full resolution (zero-initialized, so prediction
        // starts as a plain copy of the reference); the residual codes raw
        // pixels.
        ModelKind::PixelLevel => (6, 2, 3, 3, None),
    };

    let motion = MotionModel {
        ae: autoencoder(
            &mut ps,
            &mut rng,
            "motion.g_a",
            "motion.g_s",
            motion_in,
            motion_out,
            cfg.motion_n,
            cfg.motion_m,
            3,
            kind == ModelKind::PixelLevel,
        ),
        density: fcdf(&mut ps, &mut rng, "motion.g_s", "density", cfg.motion_m),
        ctx: {
            let hidden = 2 * cfg.motion_n;
            let kc3 = 3 * cfg.gmm_components * cfg.motion_m;
            GmmCtxDef {
                c0: conv(&mut ps, &mut rng, "motion.g_s", "ctx0", cfg.motion_m, hidden, CONTEXT_KERNEL, 1, CONTEXT_KERNEL / 2, Init::FanIn),
                c1: conv(&mut ps, &mut rng, "motion.g_s", "ctx1", hidden, hidden, 1, 1, 0, Init::FanIn),
                c2: conv(&mut ps, &mut rng, "motion.g_s", "ctx2", hidden, kc3, 1, 1, 0, Init::Zero),
                components: cfg.gmm_components,
                latent_channels: cfg.motion_m,
            }
        },
    };

    let residual = ResidualModel {
        ae: autoencoder(
            &mut ps,
            &mut rng,
            "residual.g_a",
            "residual.g_s",
            residual_in,
            residual_out,
            cfg.residual_n,
            cfg.residual_m,
            3,
            false,
        ),
        hyper: hyper(&mut ps, &mut rng, "residual.h_a", "residual.h_s", cfg.residual_m, cfg.residual_n),
    };

    Ok(Model { kind, cfg: *cfg, params: ps, iframe, motion, residual, cross })
}

impl Model {
    fn cross_def(&self) -> &CrossScaleDef {
        self.cross.as_ref().expect("cross-scale modules on a pixel-level model")
    }

    /// Frame feature at half resolution (cross-scale models).
    pub fn features<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        let c = self.cross_def();
        let f = c.feat_conv.forward(g, p, x)?;
        c.feat_rb.forward(g, p, f)
    }

    /// Reference feature pyramid {L1, L2, L3} at 1/2, 1/4, 1/8 resolution.
    pub fn pyramid<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        f_ref: VarId,
    ) -> std::result::Result<[VarId; 3], CoreError> {
        let c = self.cross_def();
        let (_, _, h, w) = g.value(f_ref).dims4()?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(CoreError::shape(
                "pyramid",
                format!("feature dims {h}x{w} must be divisible by 4"),
            ));
        }
        let l1 = c.l1_proj.forward(g, p, f_ref)?;
        let l2 = c.down2_conv.forward(g, p, f_ref)?;
        let l2 = c.down2_rb.forward(g, p, l2)?;
        let l3 = c.down3_conv.forward(g, p, l2)?;
        let l3 = c.down3_rb.forward(g, p, l3)?;
        Ok([l1, l2, l3])
    }

    /// Motion latent from the reference and current features (or frames in
    /// pixel mode), concatenated channel-wise.
    pub fn motion_analysis<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        f_ref: VarId,
        f_cur: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        let cat = g.concat_channels(&[f_ref, f_cur])?;
        self.motion.ae.encode(g, p, cat)
    }

    /// Decoded motion information M_t (cross-scale) or flow field (pixel).
    pub fn motion_synthesis<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        v_m: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        self.motion.ae.decode(g, p, v_m)
    }

    /// Alignment blocks applied to the current feature before residual
    /// formation.
    pub fn align_current<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        f: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        self.cross_def().align_cur.forward(g, p, f)
    }

    /// Alignment blocks applied to the predicted feature.
    pub fn align_predicted<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        f: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        self.cross_def().align_ref.forward(g, p, f)
    }

    /// Final upsampler: reconstructed feature to the reconstructed frame.
    pub fn upsample<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        f_hat: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        let c = self.cross_def();
        let h = c.up_rb.forward(g, p, f_hat)?;
        c.up_conv.forward(g, p, h)
    }

    /// Binds parameters with the given trainable-group predicate.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, trainable: impl Fn(&str) -> bool) -> Bound {
        self.params.bind(g, trainable)
    }

    pub fn bind_frozen<T: Scalar>(&self, g: &mut Graph<T>) -> Bound {
        self.params.bind_frozen(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use envc_core::Tensor;

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
    fn group_vocabulary_is_complete() {
        let m = build_model(ModelKind::CrossScale, &tiny_cfg(), 1).unwrap();
        let groups = m.params.groups();
        for expect in [
            "i_frame.g_a",
            "i_frame.g_s",
            "i_frame.h_a",
            "i_frame.h_s",
            "motion.g_a",
            "motion.g_s",
            "residual.g_a",
            "residual.g_s",
            "residual.h_a",
            "residual.h_s",
            "feature_extractor",
            "multi_scale_extractor",
            "sampling_projection",
            "output_projection",
            "align_blocks",
            "final_upsampler",
        ] {
            assert!(groups.iter().any(|g| g == expect), "missing group {expect}");
        }

        let pixel = build_model(ModelKind::PixelLevel, &tiny_cfg(), 1).unwrap();
        let pg = pixel.params.groups();
        assert!(pg.iter().all(|g| !g.starts_with("sampling")));
    }

    #[test]
    fn iframe_shapes_mirror() {
        let cfg = tiny_cfg();
        let m = build_model(ModelKind::CrossScale, &cfg, 2).unwrap();
        let mut g = Graph::<f32>::new();
        let p = m.bind_frozen(&mut g);
        let x = g.input(Tensor::zeros(&[1, 3, 64, 64]));
        let y = m.iframe.ae.encode(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, cfg.iframe_m, 4, 4]);
        let z = m.iframe.hyper.encode(&mut g, &p, y).unwrap();
        assert_eq!(g.value(z).shape(), &[1, cfg.iframe_n, 1, 1]);
        let (mu, sig) = m.iframe.hyper.decode(&mut g, &p, z).unwrap();
        assert_eq!(g.value(mu).shape(), g.value(y).shape());
        assert_eq!(g.value(sig).shape(), g.value(y).shape());
        let xh = m.iframe.ae.decode(&mut g, &p, y).unwrap();
        assert_eq!(g.value(xh).shape(), &[1, 3, 64, 64]);
    }

    #[test]
    fn feature_and_motion_scales() {
        let cfg = tiny_cfg();
        let m = build_model(ModelKind::CrossScale, &cfg, 3).unwrap();
        let mut g = Graph::<f32>::new();
        let p = m.bind_frozen(&mut g);
        let x = g.input(Tensor::zeros(&[1, 3, 64, 64]));
        let f = m.features(&mut g, &p, x).unwrap();
        assert_eq!(g.value(f).shape(), &[1, cfg.feature_channels, 32, 32]);

        let pyr = m.pyramid(&mut g, &p, f).unwrap();
        assert_eq!(g.value(pyr[0]).shape(), &[1, 4, 32, 32]);
        assert_eq!(g.value(pyr[1]).shape(), &[1, 4, 16, 16]);
        assert_eq!(g.value(pyr[2]).shape(), &[1, 4, 8, 8]);

        let y_m = m.motion_analysis(&mut g, &p, f, f).unwrap();
        assert_eq!(g.value(y_m).shape(), &[1, cfg.motion_m, 4, 4]);
        let m_t = m.motion_synthesis(&mut g, &p, y_m).unwrap();
        assert_eq!(g.value(m_t).shape(), &[1, cfg.motion_info_channels(), 32, 32]);

        let up = m.upsample(&mut g, &p, f).unwrap();
        assert_eq!(g.value(up).shape(), &[1, 3, 64, 64]);
    }

    #[test]
    fn pyramid_rejects_unaligned_features() {
        let m = build_model(ModelKind::CrossScale, &tiny_cfg(), 4).unwrap();
        let mut g = Graph::<f32>::new();
        let p = m.bind_frozen(&mut g);
        let f = g.input(Tensor::zeros(&[1, 4, 30, 32]));
        assert!(m.pyramid(&mut g, &p, f).is_err());
    }

    #[test]
    fn pixel_motion_decodes_flow_at_full_resolution() {
        let cfg = tiny_cfg();
        let m = build_model(ModelKind::PixelLevel, &cfg, 5).unwrap();
        let mut g = Graph::<f32>::new();
        let p = m.bind_frozen(&mut g);
        let a = g.input(Tensor::zeros(&[1, 3, 32, 32]));
        let b = g.input(Tensor::zeros(&[1, 3, 32, 32]));
        let y = m.motion_analysis(&mut g, &p, a, b).unwrap();
        assert_eq!(g.value(y).shape(), &[1, cfg.motion_m, 4, 4]);
        let flow = m.motion_synthesis(&mut g, &p, y).unwrap();
        assert_eq!(g.value(flow).shape(), &[1, 2, 32, 32]);
        // Zero-initialized flow head: prediction starts at zero motion.
        assert!(g.value(flow).data().iter().all(|&v| v == 0.0));

        let r = m.residual.ae.encode(&mut g, &p, a).unwrap();
        assert_eq!(g.value(r).shape(), &[1, cfg.residual_m, 4, 4]);
    }

    #[test]
    fn gmm_context_shapes() {
        let cfg = tiny_cfg();
        let m = build_model(ModelKind::CrossScale, &cfg, 6).unwrap();
        let mut g = Graph::<f32>::new();
        let p = m.bind_frozen(&mut g);
        let v = g.input(Tensor::zeros(&[1, cfg.motion_m, 4, 4]));
        let (pi, mu, sig) = m.motion.ctx.forward(&mut g, &p, v).unwrap();
        let kc = cfg.gmm_components * cfg.motion_m;
        for id in [pi, mu, sig] {
            assert_eq!(g.value(id).shape(), &[1, kc, 4, 4]);
        }
        // Zero-initialized head: neutral mixture at start.
        assert!(g.value(pi).data().iter().all(|&v| v == 0.0));
        assert!(g.value(mu).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_build_is_reproducible() {
        let a = build_model(ModelKind::CrossScale, &tiny_cfg(), 9).unwrap();
        let b = build_model(ModelKind::CrossScale, &tiny_cfg(), 9).unwrap();
        assert_eq!(a.params.len(), b.params.len());
        for ((_, ia, va), (_, ib, vb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(ia.name, ib.name);
            assert_eq!(va.max_abs_diff(vb), 0.0);
        }
        let c = build_model(ModelKind::CrossScale, &tiny_cfg(), 10).unwrap();
        let diff: f64 = a
            .params
            .iter()
            .zip(c.params.iter())
            .map(|((_, _, va), (_, _, vc))| va.max_abs_diff(vc))
            .fold(0.0, f64::max);
        assert!(diff > 0.0);
    }
}
