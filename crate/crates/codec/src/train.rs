//! Six-stage training schedule: independent I/P pre-training, joint
//! rollouts over a GoP, and the soft-then-hard handover from uniform-noise
//! surrogates to hard rounding.
//!
//! Distortion is measured on `[0, 1]`-scaled RGB, and the per-frame rate
//! term is bits per pixel, so one λ value weights both the same way the
//! test-time objective does. Checkpoints record the λ index together with
//! the distortion metric, which fixes that normalization.

use std::io::Write;
use std::path::Path;

use envc_core::optim::Adam;
use envc_core::quant::QuantMode;
use envc_core::{Graph, Rng, Tensor, VarId};

use crate::checkpoint::{load_checkpoint, save_checkpoint, STAGE_INIT};
use crate::config::{Distortion, NetConfig, SCALES};
use crate::entropy::rate::{factorized_rate_bits, gaussian_rate_bits, gmm_rate_bits};
use crate::error::{CodecError, Result};
use crate::frame::Frame;
use crate::layers::Bound;
use crate::metrics::{self, ms_ssim_graph, ms_ssim_levels};
use crate::model::{build_model, FrameKind, Model, ModelKind};
use crate::pipeline::{decode_sequence, encode_sequence};
use crate::synth::{gen_synthetic, SynthKind, SyntheticSpec};
use crate::warp::predict_feature;

/// Where a P-frame rollout step took its reference from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefSource {
    /// Ground-truth previous frame (P-frame pre-training only).
    Lossless,
    /// Reconstruction of the previous frame inside the same rollout.
    Reconstructed,
}

/// Per-frame distortion weights for the later P-frames of a GoP: the t-th
/// P-frame's distortion is scaled by `mu1 + delta * (t - 1)`.
#[derive(Clone, Copy, Debug)]
pub struct ModulationSchedule {
    pub mu1: f64,
    pub delta: f64,
}

impl Default for ModulationSchedule {
    fn default() -> Self {
        ModulationSchedule {
            mu1: 1.0,
            delta: 0.2,
        }
    }
}

impl ModulationSchedule {
    /// Weight of the `t`-th P-frame, 1-based.
    pub fn mu(&self, t: usize) -> f64 {
        self.mu1 + self.delta * (t as f64 - 1.0)
    }
}

/// Quantizer selection per sub-network for one training stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubnetQuant {
    pub iframe: QuantMode,
    pub motion: QuantMode,
    pub residual: QuantMode,
}

impl SubnetQuant {
    pub const fn uniform(mode: QuantMode) -> Self {
        SubnetQuant {
            iframe: mode,
            motion: mode,
            residual: mode,
        }
    }
}

/// The six training stages. The two joint-T=5 phases (modulated loss and
/// I-frame hard rounding) run merged as one stage, and the final hard stage
/// is split into its motion and residual phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// I-frame autoencoder alone, AUN.
    IFramePretrain,
    /// P-frame model alone against lossless references, AUN.
    PFramePretrain,
    /// Everything jointly on short rollouts, AUN.
    Joint3,
    /// Longer rollouts with modulated distortion weights; the I-frame
    /// encoder side is frozen and its latents are hard-rounded.
    JointModulated,
    /// Motion hard rounding with a straight-through gradient; I-frame model
    /// and motion encoder frozen, motion rate measured at integers.
    MotionHard,
    /// Hard rounding everywhere; only the residual decoder and hyper
    /// decoder keep training.
    ResidualHard,
}

/// All parameter groups a cross-scale model owns.
const ALL_GROUPS: [&str; 16] = [
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
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::IFramePretrain => "i_frame_pretrain",
            Stage::PFramePretrain => "p_frame_pretrain",
            Stage::Joint3 => "joint_t3",
            Stage::JointModulated => "joint_t5_i_hard",
            Stage::MotionHard => "motion_hard",
            Stage::ResidualHard => "residual_hard",
        }
    }

    /// Checkpoint tag a model must carry to enter this stage.
    pub fn entry_tag(self) -> u8 {
        match self {
            Stage::IFramePretrain => 0,
            Stage::PFramePretrain => 1,
            Stage::Joint3 => 2,
            Stage::JointModulated => 3,
            Stage::MotionHard => 5,
            Stage::ResidualHard => 6,
        }
    }

    /// Checkpoint tag written after this stage completes. The merged joint
    /// stage advances the tag by two.
    pub fn result_tag(self) -> u8 {
        match self {
            Stage::IFramePretrain => 1,
            Stage::PFramePretrain => 2,
            Stage::Joint3 => 3,
            Stage::JointModulated => 5,
            Stage::MotionHard => 6,
            Stage::ResidualHard => 7,
        }
    }

    /// Parameter groups held fixed during this stage.
    pub fn frozen_groups(self) -> Vec<String> {
        let frozen: &[&str] = match self {
            Stage::IFramePretrain => {
                return ALL_GROUPS
                    .iter()
                    .filter(|gp| !gp.starts_with("i_frame."))
                    .map(|gp| gp.to_string())
                    .collect();
            }
            Stage::PFramePretrain => &[
                "i_frame.g_a",
                "i_frame.g_s",
                "i_frame.h_a",
                "i_frame.h_s",
            ],
            Stage::Joint3 => &[],
            Stage::JointModulated => &["i_frame.g_a", "i_frame.h_a"],
            Stage::MotionHard => &[
                "i_frame.g_a",
                "i_frame.g_s",
                "i_frame.h_a",
                "i_frame.h_s",
                "motion.g_a",
            ],
            Stage::ResidualHard => {
                return ALL_GROUPS
                    .iter()
                    .filter(|gp| **gp != "residual.g_s" && **gp != "residual.h_s")
                    .map(|gp| gp.to_string())
                    .collect();
            }
        };
        frozen.iter().map(|gp| gp.to_string()).collect()
    }

    pub fn quant(self) -> SubnetQuant {
        match self {
            Stage::IFramePretrain | Stage::PFramePretrain | Stage::Joint3 => {
                SubnetQuant::uniform(QuantMode::Aun)
            }
            Stage::JointModulated => SubnetQuant {
                iframe: QuantMode::Round,
                motion: QuantMode::Aun,
                residual: QuantMode::Aun,
            },
            Stage::MotionHard => SubnetQuant {
                iframe: QuantMode::Round,
                motion: QuantMode::RoundSte,
                residual: QuantMode::RoundSte,
            },
            Stage::ResidualHard => SubnetQuant::uniform(QuantMode::Round),
        }
    }

    pub fn modulated(self) -> bool {
        matches!(
            self,
            Stage::JointModulated | Stage::MotionHard | Stage::ResidualHard
        )
    }

    /// P-frame references come from the ground truth instead of the rollout.
    pub fn lossless_reference(self) -> bool {
        self == Stage::PFramePretrain
    }

    /// Motion rate is measured on detached integer latents so the rate term
    /// trains only the discrete density, not the latent.
    pub fn detached_motion_rate(self) -> bool {
        self == Stage::MotionHard
    }
}

/// Learning rate with one optional step decay.
#[derive(Clone, Copy, Debug)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_at: Option<usize>,
    pub decayed: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            base: lr,
            decay_at: None,
            decayed: lr,
        }
    }

    pub fn step(base: f64, decay_at: usize, decayed: f64) -> Self {
        LrSchedule {
            base,
            decay_at: Some(decay_at),
            decayed,
        }
    }

    pub fn at(&self, iteration: usize) -> f64 {
        match self.decay_at {
            Some(step) if iteration >= step => self.decayed,
            _ => self.base,
        }
    }
}

/// One row of the training schedule.
#[derive(Clone, Debug)]
pub struct StagePlan {
    pub stage: Stage,
    /// Frames per rollout, counting the reference or I-frame.
    pub gop_t: usize,
    pub frozen_groups: Vec<String>,
    pub quant: SubnetQuant,
    pub modulated: bool,
    pub lr: LrSchedule,
    pub iterations: usize,
}

impl StagePlan {
    /// Builds the canonical plan for `stage`; only the rollout length,
    /// iteration budget, and learning rate are free.
    pub fn new(stage: Stage, gop_t: usize, iterations: usize, lr: LrSchedule) -> Self {
        StagePlan {
            stage,
            gop_t,
            frozen_groups: stage.frozen_groups(),
            quant: stage.quant(),
            modulated: stage.modulated(),
            lr,
            iterations,
        }
    }

    pub fn is_frozen(&self, group: &str) -> bool {
        self.frozen_groups.iter().any(|gp| gp == group)
    }

    /// Rejects plans whose freeze set, quantizers, or modulation flag
    /// deviate from the stage definition, and rollout lengths the stage
    /// does not support.
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(CodecError::train("stage plan needs at least 1 iteration"));
        }
        if self.lr.base <= 0.0 || self.lr.decayed <= 0.0 {
            return Err(CodecError::train("learning rate must be positive"));
        }
        let mut canon = self.stage.frozen_groups();
        canon.sort();
        let mut ours = self.frozen_groups.clone();
        ours.sort();
        if canon != ours {
            return Err(CodecError::train(format!(
                "freeze set of stage {} does not match its definition",
                self.stage.name()
            )));
        }
        if self.quant != self.stage.quant() {
            return Err(CodecError::train(format!(
                "quantizer settings of stage {} do not match its definition",
                self.stage.name()
            )));
        }
        if self.modulated != self.stage.modulated() {
            return Err(CodecError::train(format!(
                "modulation flag of stage {} does not match its definition",
                self.stage.name()
            )));
        }
        let t_ok = match self.stage {
            Stage::IFramePretrain => self.gop_t == 1,
            Stage::PFramePretrain => self.gop_t == 2,
            Stage::Joint3 => (2..=5).contains(&self.gop_t),
            _ => (3..=5).contains(&self.gop_t),
        };
        if !t_ok {
            return Err(CodecError::train(format!(
                "stage {} does not support a {}-frame rollout",
                self.stage.name(),
                self.gop_t
            )));
        }
        Ok(())
    }

    fn coded_frame_labels(&self) -> Vec<String> {
        let mut labels = Vec::new();
        if !self.stage.lossless_reference() {
            labels.push("i".to_string());
        }
        let p_count = self.gop_t - 1;
        for t in 1..=p_count {
            labels.push(format!("p{t}"));
        }
        labels
    }

    fn csv_header(&self) -> String {
        let mut cols = vec!["iter".to_string(), "stage".to_string()];
        for label in self.coded_frame_labels() {
            cols.push(format!("r_{label}"));
            cols.push(format!("d_{label}"));
        }
        cols.push("loss".to_string());
        cols.join(",")
    }
}

/// The full schedule at desk scale: budgets and rollout lengths small
/// enough to run on a CPU.
pub fn desk_plans() -> Vec<StagePlan> {
    vec![
        StagePlan::new(Stage::IFramePretrain, 1, 2000, LrSchedule::constant(1e-3)),
        StagePlan::new(Stage::PFramePretrain, 2, 2000, LrSchedule::constant(1e-3)),
        StagePlan::new(Stage::Joint3, 3, 2000, LrSchedule::step(1e-3, 1000, 1e-4)),
        StagePlan::new(Stage::JointModulated, 5, 1000, LrSchedule::step(5e-4, 400, 1e-4)),
        StagePlan::new(Stage::MotionHard, 5, 500, LrSchedule::constant(1e-4)),
        StagePlan::new(Stage::ResidualHard, 5, 500, LrSchedule::constant(1e-4)),
    ]
}

/// The full-scale schedule: 1M-iteration pre-training and T=5 joint stages.
pub fn paper_plans() -> Vec<StagePlan> {
    vec![
        StagePlan::new(Stage::IFramePretrain, 1, 1_000_000, LrSchedule::constant(5e-5)),
        StagePlan::new(Stage::PFramePretrain, 2, 1_000_000, LrSchedule::constant(5e-5)),
        StagePlan::new(Stage::Joint3, 3, 200_000, LrSchedule::step(5e-5, 100_000, 1e-5)),
        StagePlan::new(
            Stage::JointModulated,
            5,
            50_000,
            LrSchedule::step(5e-5, 20_000, 1e-5),
        ),
        StagePlan::new(Stage::MotionHard, 5, 20_000, LrSchedule::constant(1e-5)),
        StagePlan::new(Stage::ResidualHard, 5, 20_000, LrSchedule::constant(1e-5)),
    ]
}

/// Plans by stage name, e.g. `"joint_t3"`; used by config parsing.
pub fn plan_by_name(plans: &[StagePlan], name: &str) -> Option<StagePlan> {
    plans.iter().find(|p| p.stage.name() == name).cloned()
}

/// Logged rate/distortion pair for one coded frame of a rollout.
#[derive(Clone, Copy, Debug)]
pub struct FrameTerms {
    pub kind: FrameKind,
    pub ref_source: Option<RefSource>,
    /// Bits per pixel under the soft or discrete rate model of the stage.
    pub rate_bpp: f64,
    /// MSE on [0,1] RGB, or 1 − MS-SSIM.
    pub distortion: f64,
}

/// Rate-distortion loss over logged frame terms: every frame contributes
/// `R + λ·D`, and with a modulation schedule the t-th P-frame's distortion
/// is additionally weighted by `μ_t`.
pub fn rd_loss(terms: &[FrameTerms], lambda: f64, modulation: Option<ModulationSchedule>) -> f64 {
    let mut loss = 0.0;
    let mut p_index = 0usize;
    for term in terms {
        let mu = match (term.kind, modulation) {
            (FrameKind::Predicted, Some(m)) => {
                p_index += 1;
                m.mu(p_index)
            }
            (FrameKind::Predicted, None) => {
                p_index += 1;
                1.0
            }
            _ => 1.0,
        };
        loss += term.rate_bpp + mu * lambda * term.distortion;
    }
    loss
}

/// Everything the rollout builder needs to know about a stage.
#[derive(Clone, Copy, Debug)]
struct RolloutSpec {
    frames: usize,
    lossless_ref: bool,
    quant: SubnetQuant,
    detached_motion_rate: bool,
    modulated: bool,
}

impl StagePlan {
    fn rollout(&self) -> RolloutSpec {
        RolloutSpec {
            frames: self.gop_t,
            lossless_ref: self.stage.lossless_reference(),
            quant: self.quant,
            detached_motion_rate: self.stage.detached_motion_rate(),
            modulated: self.modulated,
        }
    }
}

fn scalar_value(g: &Graph<f32>, v: VarId) -> f64 {
    g.value(v).data()[0] as f64
}

/// Distortion node for one frame: MSE on [0,1] RGB or 1 − MS-SSIM.
fn distortion_node(
    g: &mut Graph<f32>,
    x: VarId,
    x_hat: VarId,
    distortion: Distortion,
) -> Result<VarId> {
    match distortion {
        Distortion::Mse => Ok(g.mse(x, x_hat)?),
        Distortion::MsSsim => {
            let (_, _, h, w) = g.value(x).dims4()?;
            let levels = ms_ssim_levels(h, w);
            if levels == 0 {
                return Err(CodecError::dimension(format!(
                    "{h}x{w} frames are too small for MS-SSIM training"
                )));
            }
            let s = ms_ssim_graph(g, x, x_hat, levels)?;
            let neg = g.mul_scalar(s, -1.0)?;
            Ok(g.add_scalar(neg, 1.0)?)
        }
    }
}

/// I-frame training step: returns the reconstruction and total rate in bits.
fn iframe_step(
    g: &mut Graph<f32>,
    bp: &Bound,
    model: &Model,
    x: VarId,
    mode: QuantMode,
    rng: &mut Rng,
) -> Result<(VarId, VarId)> {
    let y = model.iframe.ae.encode(g, bp, x)?;
    let z = model.iframe.hyper.encode(g, bp, y)?;
    let v_z = g.quantize(z, mode, rng)?;
    let v_y = g.quantize(y, mode, rng)?;
    let rate_z = factorized_rate_bits(g, v_z, model.iframe.hyper.density.var_ids(bp))?;
    let (mu, raw_sigma) = model.iframe.hyper.decode(g, bp, v_z)?;
    let rate_y = gaussian_rate_bits(g, v_y, mu, raw_sigma)?;
    let rate = g.add(rate_z, rate_y)?;
    let x_hat = model.iframe.ae.decode(g, bp, v_y)?;
    Ok((x_hat, rate))
}

/// P-frame training step against the reference variable `x_ref` (a previous
/// reconstruction, or a ground-truth frame during pre-training). Mirrors
/// the coding pipeline's dataflow with the stage's quantizers in place of
/// hard rounding.
#[allow(clippy::too_many_arguments)]
fn pframe_step(
    g: &mut Graph<f32>,
    bp: &Bound,
    model: &Model,
    x_ref: VarId,
    x_t: VarId,
    spec: &RolloutSpec,
    ar: bool,
    rng: &mut Rng,
) -> Result<(VarId, VarId)> {
    let (cur, refr) = match model.kind {
        ModelKind::CrossScale => {
            let f_ref = model.features(g, bp, x_ref)?;
            let f_t = model.features(g, bp, x_t)?;
            (f_t, f_ref)
        }
        ModelKind::PixelLevel => (x_t, x_ref),
    };
    let y_m = model.motion_analysis(g, bp, refr, cur)?;
    let v_m = g.quantize(y_m, spec.quant.motion, rng)?;

    let rate_input = if spec.detached_motion_rate {
        g.round_detached(y_m)
    } else {
        v_m
    };
    let rate_m = if ar {
        let (pi, mu, sig) = model.motion.ctx.forward(g, bp, rate_input)?;
        gmm_rate_bits(g, rate_input, pi, mu, sig, model.cfg.gmm_components)?
    } else {
        factorized_rate_bits(g, rate_input, model.motion.density.var_ids(bp))?
    };

    let prediction = match model.kind {
        ModelKind::CrossScale => {
            let m_t = model.motion_synthesis(g, bp, v_m)?;
            let pred = predict_feature(model, g, bp, refr, m_t, &[true; SCALES])?;
            model.align_predicted(g, bp, pred.feature)?
        }
        ModelKind::PixelLevel => {
            let flow = model.motion_synthesis(g, bp, v_m)?;
            let (b, _, h, w) = g.value(x_ref).dims4()?;
            let base = g.constant(crate::warp::identity_grid::<f32>(b, h, w, 0));
            let coords = g.add(base, flow)?;
            g.grid_sample(x_ref, coords)?
        }
    };

    let residual = match model.kind {
        ModelKind::CrossScale => {
            let aligned = model.align_current(g, bp, cur)?;
            g.sub(aligned, prediction)?
        }
        ModelKind::PixelLevel => g.sub(x_t, prediction)?,
    };
    let y_r = model.residual.ae.encode(g, bp, residual)?;
    let z_r = model.residual.hyper.encode(g, bp, y_r)?;
    let v_z = g.quantize(z_r, spec.quant.residual, rng)?;
    let v_r = g.quantize(y_r, spec.quant.residual, rng)?;
    let rate_z = factorized_rate_bits(g, v_z, model.residual.hyper.density.var_ids(bp))?;
    let (mu, raw_sigma) = model.residual.hyper.decode(g, bp, v_z)?;
    let rate_y = gaussian_rate_bits(g, v_r, mu, raw_sigma)?;

    let r_hat = model.residual.ae.decode(g, bp, v_r)?;
    let f_hat = g.add(r_hat, prediction)?;
    let x_hat = match model.kind {
        ModelKind::CrossScale => model.upsample(g, bp, f_hat)?,
        ModelKind::PixelLevel => f_hat,
    };

    let rate = g.add(rate_m, rate_z)?;
    let rate = g.add(rate, rate_y)?;
    Ok((x_hat, rate))
}

/// Unrolls one clip on the tape and assembles the stage loss. Returns the
/// loss node and the logged per-frame terms.
#[allow(clippy::too_many_arguments)]
fn build_rollout(
    g: &mut Graph<f32>,
    bp: &Bound,
    model: &Model,
    clip: &[Tensor<f32>],
    spec: &RolloutSpec,
    lambda: f64,
    distortion: Distortion,
    ar: bool,
    rng: &mut Rng,
) -> Result<(VarId, Vec<FrameTerms>)> {
    if clip.len() != spec.frames {
        return Err(CodecError::dimension(format!(
            "rollout wants {} frames, clip has {}",
            spec.frames,
            clip.len()
        )));
    }
    let (_, _, h, w) = clip[0].dims4().map_err(CodecError::from)?;
    if h % 64 != 0 || w % 64 != 0 {
        return Err(CodecError::dimension(format!(
            "training frames must have 64-multiple dimensions, got {h}x{w}"
        )));
    }
    let px = (h * w) as f64;
    let modulation = spec.modulated.then(ModulationSchedule::default);

    let xs: Vec<VarId> = clip.iter().map(|t| g.constant(t.clone())).collect();
    let mut terms = Vec::new();
    let mut loss: Option<VarId> = None;
    let mut p_index = 0usize;
    let mut reference: Option<VarId> = None;

    for t in 0..spec.frames {
        let (x_hat, rate, kind, ref_source) = if t == 0 {
            if spec.lossless_ref {
                reference = Some(xs[0]);
                continue;
            }
            let (x_hat, rate) = iframe_step(g, bp, model, xs[0], spec.quant.iframe, rng)?;
            (x_hat, rate, FrameKind::Intra, None)
        } else {
            let (x_ref, source) = if spec.lossless_ref {
                (xs[t - 1], RefSource::Lossless)
            } else {
                (reference.expect("reference set"), RefSource::Reconstructed)
            };
            let (x_hat, rate) = pframe_step(g, bp, model, x_ref, xs[t], spec, ar, rng)?;
            (x_hat, rate, FrameKind::Predicted, Some(source))
        };
        if !spec.lossless_ref {
            reference = Some(x_hat);
        }

        let dist = distortion_node(g, xs[t], x_hat, distortion)?;
        let bpp = g.mul_scalar(rate, (1.0 / px) as f32)?;
        let mu = match kind {
            FrameKind::Predicted => {
                p_index += 1;
                modulation.map_or(1.0, |m| m.mu(p_index))
            }
            FrameKind::Intra => 1.0,
        };
        let weighted = g.mul_scalar(dist, (mu * lambda) as f32)?;
        let frame_loss = g.add(bpp, weighted)?;
        loss = Some(match loss {
            Some(acc) => g.add(acc, frame_loss)?,
            None => frame_loss,
        });
        terms.push(FrameTerms {
            kind,
            ref_source,
            rate_bpp: scalar_value(g, bpp),
            distortion: scalar_value(g, dist),
        });
    }
    Ok((loss.expect("at least one coded frame"), terms))
}

/// Deterministic stream of training clips: synthetic motion patterns at a
/// fixed crop size, optionally mixed with user-supplied clips.
#[derive(Debug)]
pub struct ClipSampler {
    kinds: Vec<SynthKind>,
    width: usize,
    height: usize,
    frames: usize,
    rng: Rng,
    user_clips: Vec<Vec<Frame>>,
    draws: u64,
}

impl ClipSampler {
    pub fn synthetic(
        kinds: &[SynthKind],
        width: usize,
        height: usize,
        frames: usize,
        seed: u64,
    ) -> Result<Self> {
        if kinds.is_empty() {
            return Err(CodecError::config("clip sampler needs at least one kind"));
        }
        if frames == 0 {
            return Err(CodecError::config("clips need at least one frame"));
        }
        Ok(ClipSampler {
            kinds: kinds.to_vec(),
            width,
            height,
            frames,
            rng: Rng::new(seed ^ 0xC11B_5A4D),
            user_clips: Vec::new(),
            draws: 0,
        })
    }

    /// All three motion patterns at the desk crop size.
    pub fn desk(seed: u64) -> Self {
        Self::synthetic(
            &[
                SynthKind::Translate,
                SynthKind::FastTranslate,
                SynthKind::Occluder,
            ],
            64,
            64,
            5,
            seed,
        )
        .expect("desk sampler arguments are valid")
    }

    /// Sampler that only ever draws (crops of) the given clips — no
    /// synthetic mixing — for overfit and regression runs.
    pub fn fixed(
        clips: Vec<Vec<Frame>>,
        width: usize,
        height: usize,
        frames: usize,
        seed: u64,
    ) -> Result<Self> {
        if clips.is_empty() {
            return Err(CodecError::config("fixed sampler needs at least one clip"));
        }
        if frames == 0 {
            return Err(CodecError::config("clips need at least one frame"));
        }
        let mut sampler = ClipSampler {
            kinds: Vec::new(),
            width,
            height,
            frames,
            rng: Rng::new(seed ^ 0xC11B_5A4D),
            user_clips: Vec::new(),
            draws: 0,
        };
        for clip in clips {
            sampler.push_clip(clip)?;
        }
        Ok(sampler)
    }

    /// Adds a clip to the pool; it will be randomly cropped to the sampler's
    /// size when drawn.
    pub fn push_clip(&mut self, clip: Vec<Frame>) -> Result<()> {
        if clip.len() < self.frames {
            return Err(CodecError::dimension(format!(
                "clip has {} frames, sampler needs {}",
                clip.len(),
                self.frames
            )));
        }
        for f in &clip {
            if f.width() < self.width || f.height() < self.height {
                return Err(CodecError::dimension(format!(
                    "clip frames are {}x{}, smaller than the {}x{} crop",
                    f.width(), f.height(), self.width, self.height
                )));
            }
        }
        self.user_clips.push(clip);
        Ok(())
    }

    pub fn next_clip(&mut self) -> Result<Vec<Frame>> {
        self.draws += 1;
        if !self.user_clips.is_empty() && (self.kinds.is_empty() || self.rng.below(2) == 0) {
            return self.crop_user_clip();
        }
        let kind = self.kinds[(self.draws as usize - 1) % self.kinds.len()];
        let mut spec = SyntheticSpec::new(kind, self.width, self.height, self.frames, 0);
        spec.seed = self.rng.next_u64();
        let (dx, dy) = spec.magnitude;
        let scale = self.rng.range(0.6, 1.4);
        let sx = if self.rng.below(2) == 0 { 1.0 } else { -1.0 };
        let sy = if self.rng.below(2) == 0 { 1.0 } else { -1.0 };
        spec.magnitude = (dx * scale * sx, dy * scale * sy);
        Ok(gen_synthetic(&spec)?.frames)
    }

    fn crop_user_clip(&mut self) -> Result<Vec<Frame>> {
        let clip = &self.user_clips[self.rng.below(self.user_clips.len() as u64) as usize];
        let start = self.rng.below((clip.len() - self.frames + 1) as u64) as usize;
        let x0 = self.rng.below((clip[start].width() - self.width + 1) as u64) as usize;
        let y0 = self.rng.below((clip[start].height() - self.height + 1) as u64) as usize;
        clip[start..start + self.frames]
            .iter()
            .map(|f| crop_frame(f, x0, y0, self.width, self.height))
            .collect()
    }
}

fn crop_frame(frame: &Frame, x0: usize, y0: usize, width: usize, height: usize) -> Result<Frame> {
    let mut out = Frame::new(width, height)?;
    for c in 0..3 {
        for y in 0..height {
            for x in 0..width {
                *out.sample_mut(c, x, y) = frame.sample(c, x0 + x, y0 + y);
            }
        }
    }
    Ok(out)
}

/// Summary of one completed stage.
#[derive(Clone, Debug)]
pub struct StageReport {
    pub stage: Stage,
    pub losses: Vec<f64>,
}

impl StageReport {
    pub fn first_loss(&self) -> f64 {
        *self.losses.first().expect("stage ran at least once")
    }

    pub fn last_loss(&self) -> f64 {
        *self.losses.last().expect("stage ran at least once")
    }
}

/// Test-time rate-distortion measurement through the real coder: rate is
/// chunk-byte accounting, distortion is measured on decoded frames, and the
/// loss sums `bpp + λ·D` over every frame of every clip, averaged per clip.
#[derive(Clone, Copy, Debug)]
pub struct TrueRd {
    pub bpp: f64,
    pub distortion: f64,
    pub loss: f64,
}

/// Measures the discrete objective on held-out clips: each clip is coded as
/// one GoP with hard rounding and the actual range coder.
pub fn eval_true_rd(
    model: &Model,
    clips: &[Vec<Frame>],
    lambda: f64,
    distortion: Distortion,
    ar: bool,
) -> Result<TrueRd> {
    if clips.is_empty() {
        return Err(CodecError::train("true-RD evaluation needs clips"));
    }
    let mut bpp_sum = 0.0;
    let mut dist_sum = 0.0;
    let mut loss_sum = 0.0;
    let mut frame_count = 0usize;
    for clip in clips {
        let (stream, stats) = encode_sequence(model, clip, clip.len(), ar, 0, 0)?;
        let (decoded, _) = decode_sequence(model, &stream, None)?;
        let px = (clip[0].width() * clip[0].height()) as f64;
        let mut clip_loss = 0.0;
        for ((orig, dec), fs) in clip.iter().zip(&decoded).zip(&stats.frames) {
            let d = match distortion {
                Distortion::Mse => metrics::mse(orig, dec)? / (255.0 * 255.0),
                Distortion::MsSsim => 1.0 - metrics::ms_ssim(orig, dec)?,
            };
            clip_loss += (fs.bytes * 8) as f64 / px + lambda * d;
            dist_sum += d;
            frame_count += 1;
        }
        bpp_sum += stats.bpp;
        loss_sum += clip_loss;
    }
    let n = clips.len() as f64;
    Ok(TrueRd {
        bpp: bpp_sum / n,
        distortion: dist_sum / frame_count as f64,
        loss: loss_sum / n,
    })
}

/// Soft rollout loss on a fixed clip with frozen noise: the same clip and
/// `noise_seed` always produce the same value, so two models can be
/// compared on an identical objective.
pub fn probe_loss(
    model: &Model,
    clip: &[Frame],
    lambda: f64,
    distortion: Distortion,
    ar: bool,
    noise_seed: u64,
) -> Result<f64> {
    let spec = RolloutSpec {
        frames: clip.len(),
        lossless_ref: false,
        quant: SubnetQuant::uniform(QuantMode::Aun),
        detached_motion_rate: false,
        modulated: false,
    };
    let tensors: Vec<Tensor<f32>> = clip.iter().map(|f| f.to_tensor()).collect();
    let mut g = Graph::<f32>::new();
    let bp = model.bind_frozen(&mut g);
    let mut rng = Rng::new(noise_seed);
    let (loss, _) = build_rollout(
        &mut g, &bp, model, &tensors, &spec, lambda, distortion, ar, &mut rng,
    )?;
    Ok(scalar_value(&g, loss))
}

/// Owns a model and its training state across stages.
#[derive(Debug)]
pub struct Trainer {
    pub model: Model,
    pub stage_tag: u8,
    pub distortion: Distortion,
    pub lambda_index: usize,
    pub ar: bool,
    pub seed: u64,
    lambda: f64,
    rng: Rng,
}

impl Trainer {
    pub fn new(
        kind: ModelKind,
        cfg: &NetConfig,
        distortion: Distortion,
        lambda_index: usize,
        ar: bool,
        seed: u64,
    ) -> Result<Self> {
        let lambda = distortion.lambda(lambda_index)?;
        let model = build_model(kind, cfg, seed)?;
        Ok(Trainer {
            model,
            stage_tag: STAGE_INIT,
            distortion,
            lambda_index,
            ar,
            seed,
            lambda,
            rng: Rng::new(seed ^ 0x7EA1_0F5E),
        })
    }

    pub fn resume(path: &Path) -> Result<Self> {
        let (model, meta) = load_checkpoint(path)?;
        let lambda = meta.distortion.lambda(meta.lambda_index)?;
        Ok(Trainer {
            model,
            stage_tag: meta.stage,
            distortion: meta.distortion,
            lambda_index: meta.lambda_index,
            ar: meta.ar,
            seed: meta.seed,
            lambda,
            rng: Rng::new(meta.seed ^ 0x7EA1_0F5E).fork(meta.stage as u64),
        })
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        save_checkpoint(
            path,
            &self.model,
            self.stage_tag,
            self.distortion,
            self.lambda_index,
            self.ar,
            self.seed,
        )
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Runs one stage. Rejects plans that skip ahead of the model's
    /// checkpoint tag or fall behind it, verifies that frozen parameters
    /// come out bit-identical, and advances the tag on success. Each
    /// iteration draws one clip, unrolls it, and applies one Adam step;
    /// `log` receives one CSV row per iteration.
    pub fn run_stage(
        &mut self,
        plan: &StagePlan,
        data: &mut ClipSampler,
        log: Option<&mut dyn Write>,
    ) -> Result<StageReport> {
        self.stage_loop(plan, data, log, plan.modulated)
    }

    /// Runs a modulated stage with the ramp switched off, so the schedule's
    /// effect can be measured against an otherwise identical run. Plans whose
    /// stage is already unmodulated are rejected; freezing, noise, and
    /// checkpoint tags behave exactly as in [`Trainer::run_stage`].
    pub fn run_stage_unmodulated(
        &mut self,
        plan: &StagePlan,
        data: &mut ClipSampler,
        log: Option<&mut dyn Write>,
    ) -> Result<StageReport> {
        if !plan.modulated {
            return Err(CodecError::config(format!(
                "stage {} is not modulated; there is no ramp to disable",
                plan.stage.name()
            )));
        }
        self.stage_loop(plan, data, log, false)
    }

    fn stage_loop(
        &mut self,
        plan: &StagePlan,
        data: &mut ClipSampler,
        mut log: Option<&mut dyn Write>,
        modulated: bool,
    ) -> Result<StageReport> {
        plan.validate()?;
        let (entry, result) = (plan.stage.entry_tag(), plan.stage.result_tag());
        if self.stage_tag < entry || self.stage_tag > result {
            return Err(CodecError::train(format!(
                "stage {} needs a checkpoint at tag {} (or {} to re-run), got {}; \
                 stages cannot be skipped",
                plan.stage.name(),
                entry,
                result,
                self.stage_tag
            )));
        }

        let frozen_flags: Vec<bool> = self
            .model
            .params
            .iter()
            .map(|(_, info, _)| plan.is_frozen(&info.group))
            .collect();
        let frozen_before: Vec<Option<Vec<u32>>> = self
            .model
            .params
            .iter()
            .zip(&frozen_flags)
            .map(|((_, _, value), &frozen)| {
                frozen.then(|| value.data().iter().map(|x| x.to_bits()).collect())
            })
            .collect();
        let ids: Vec<_> = self.model.params.iter().map(|(id, _, _)| id).collect();

        let mut adam = Adam::new(plan.lr.base);
        let spec = RolloutSpec {
            modulated,
            ..plan.rollout()
        };
        let mut losses = Vec::with_capacity(plan.iterations);
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", plan.csv_header())?;
        }

        for it in 0..plan.iterations {
            adam.lr = plan.lr.at(it);
            let clip = data.next_clip()?;
            if clip.len() < plan.gop_t {
                return Err(CodecError::dimension(format!(
                    "sampler produced {} frames, stage wants {}",
                    clip.len(),
                    plan.gop_t
                )));
            }
            let tensors: Vec<Tensor<f32>> = clip[..plan.gop_t]
                .iter()
                .map(|f| f.to_tensor())
                .collect();

            let mut g = Graph::<f32>::new();
            let bound = self.model.params.bind(&mut g, |group| !plan.is_frozen(group));
            let (loss, terms) = build_rollout(
                &mut g,
                &bound,
                &self.model,
                &tensors,
                &spec,
                self.lambda,
                self.distortion,
                self.ar,
                &mut self.rng,
            )?;
            g.backward(loss)?;
            let grads: Vec<Option<Tensor<f32>>> = ids
                .iter()
                .map(|&id| g.take_grad(bound.var(id)))
                .collect();
            let loss_value = scalar_value(&g, loss);
            adam.step(self.model.params.values_mut(), &grads, &frozen_flags)?;
            losses.push(loss_value);

            if let Some(w) = log.as_deref_mut() {
                let mut row = format!("{it},{}", plan.stage.name());
                for term in &terms {
                    row.push_str(&format!(",{:.6e},{:.6e}", term.rate_bpp, term.distortion));
                }
                writeln!(w, "{row},{loss_value:.6e}")?;
            }
        }

        for (((_, info, value), before), &frozen) in self
            .model
            .params
            .iter()
            .zip(&frozen_before)
            .zip(&frozen_flags)
        {
            if !frozen {
                continue;
            }
            let before = before.as_ref().expect("snapshot exists for frozen param");
            let same = value
                .data()
                .iter()
                .zip(before)
                .all(|(x, &b)| x.to_bits() == b);
            if !same {
                return Err(CodecError::train(format!(
                    "frozen parameter {}/{} changed during stage {}",
                    info.group,
                    info.name,
                    plan.stage.name()
                )));
            }
        }

        self.stage_tag = plan.stage.result_tag();
        Ok(StageReport {
            stage: plan.stage,
            losses,
        })
    }

    /// One soft rollout without an optimizer step; returns the loss and the
    /// logged terms. The noise stream is forked off `noise_seed` so repeated
    /// calls see identical noise.
    pub fn eval_rollout(
        &self,
        plan: &StagePlan,
        clip: &[Frame],
        noise_seed: u64,
    ) -> Result<(f64, Vec<FrameTerms>)> {
        plan.validate()?;
        let spec = plan.rollout();
        let tensors: Vec<Tensor<f32>> = clip.iter().map(|f| f.to_tensor()).collect();
        let mut g = Graph::<f32>::new();
        let bp = self.model.bind_frozen(&mut g);
        let mut rng = Rng::new(noise_seed);
        let (loss, terms) = build_rollout(
            &mut g,
            &bp,
            &self.model,
            &tensors,
            &spec,
            self.lambda,
            self.distortion,
            self.ar,
            &mut rng,
        )?;
        Ok((scalar_value(&g, loss), terms))
    }
}
