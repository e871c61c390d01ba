//! Matched-budget comparison of the two prediction modes: feature-space
//! cross-scale prediction against a pixel-space flow-and-warp baseline.
//!
//! Both arms train a fresh model through the four shared stages on the same
//! clip stream, then code held-out clips with the real range coder. The
//! interesting outputs are the discrete rate-distortion point and how the
//! inter-frame bits split between motion and residual.

use crate::config::{Distortion, NetConfig};
use crate::error::{CodecError, Result};
use crate::frame::Frame;
use crate::model::{FrameKind, Model, ModelKind};
use crate::pipeline::{decode_sequence, encode_sequence};
use crate::synth::SynthKind;
use crate::train::{
    desk_plans, eval_true_rd, ClipSampler, Stage, StagePlan, StageReport, Trainer, TrueRd,
};

/// The stages both arms share; the hard-rounding stages are deliberately
/// left out so the comparison measures the prediction structure, not the
/// quantizer handover.
pub const SHARED_STAGES: [Stage; 4] = [
    Stage::IFramePretrain,
    Stage::PFramePretrain,
    Stage::Joint3,
    Stage::JointModulated,
];

/// The desk schedule truncated to the shared stages, with each stage's
/// iteration count replaced and any learning-rate decay point moved to the
/// same relative position.
pub fn ablation_plans(iterations: [usize; 4]) -> Result<Vec<StagePlan>> {
    let mut plans = desk_plans();
    plans.truncate(SHARED_STAGES.len());
    for (plan, &iters) in plans.iter_mut().zip(&iterations) {
        if iters == 0 {
            return Err(CodecError::config(format!(
                "stage {} needs a positive iteration budget",
                plan.stage.name()
            )));
        }
        if let Some(at) = plan.lr.decay_at {
            let scaled = at * iters / plan.iterations;
            plan.lr.decay_at = (scaled > 0 && scaled < iters).then_some(scaled);
        }
        plan.iterations = iters;
        plan.validate()?;
    }
    Ok(plans)
}

/// One trained arm of the comparison.
#[derive(Clone, Debug)]
pub struct AblationRun {
    pub kind: ModelKind,
    pub seed: u64,
    /// Discrete objective on the held-out clips.
    pub rd: TrueRd,
    /// Motion bytes over all inter-frame bytes, pooled across the clips.
    pub motion_fraction: f64,
    pub stages: Vec<StageReport>,
}

/// Trains a fresh model of the given kind through the shared stages and
/// measures it on held-out clips. Every clip is coded as a single GoP and
/// decoded back, so an arm whose bitstream does not round-trip fails
/// instead of reporting numbers.
pub fn run_ablation(
    kind: ModelKind,
    cfg: &NetConfig,
    plans: &[StagePlan],
    train: &mut ClipSampler,
    eval_clips: &[Vec<Frame>],
    distortion: Distortion,
    lambda_index: usize,
    ar: bool,
    seed: u64,
) -> Result<AblationRun> {
    if plans.len() != SHARED_STAGES.len()
        || plans.iter().zip(SHARED_STAGES).any(|(p, s)| p.stage != s)
    {
        return Err(CodecError::config(
            "prediction-mode comparison runs the four shared stages in order",
        ));
    }
    if eval_clips.is_empty() {
        return Err(CodecError::config("comparison needs held-out clips"));
    }
    if eval_clips.iter().any(|c| c.len() < 2) {
        return Err(CodecError::config(
            "held-out clips need at least one inter frame",
        ));
    }

    let mut trainer = Trainer::new(kind, cfg, distortion, lambda_index, ar, seed)?;
    let mut stages = Vec::with_capacity(plans.len());
    for plan in plans {
        stages.push(trainer.run_stage(plan, train, None)?);
    }

    let rd = eval_true_rd(&trainer.model, eval_clips, trainer.lambda(), distortion, ar)?;
    let motion_fraction = motion_share(&trainer.model, eval_clips, ar)?;
    Ok(AblationRun {
        kind,
        seed,
        rd,
        motion_fraction,
        stages,
    })
}

/// Motion bytes as a share of all inter-frame bytes, pooled over the clips.
/// Each stream is decoded as part of the measurement.
fn motion_share(model: &Model, clips: &[Vec<Frame>], ar: bool) -> Result<f64> {
    let (mut motion, mut total) = (0usize, 0usize);
    for clip in clips {
        let (stream, stats) = encode_sequence(model, clip, clip.len(), ar, 0, 0)?;
        let (decoded, _) = decode_sequence(model, &stream, None)?;
        if decoded.len() != clip.len() {
            return Err(CodecError::stream(format!(
                "round trip returned {} of {} frames",
                decoded.len(),
                clip.len()
            )));
        }
        for f in &stats.frames {
            if f.kind == FrameKind::Predicted {
                motion += f.motion_bytes;
                total += f.bytes;
            }
        }
    }
    Ok(motion as f64 / total as f64)
}

/// Both arms of the comparison for one seed.
#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub cross_scale: AblationRun,
    pub pixel_level: AblationRun,
}

/// Runs both prediction modes with identical budgets, training streams, and
/// held-out clips. The training sampler is rebuilt from the same seed for
/// each arm, so both see the same clips in the same order.
pub fn compare_prediction_modes(
    cfg: &NetConfig,
    plans: &[StagePlan],
    kinds: &[SynthKind],
    eval_clips: &[Vec<Frame>],
    distortion: Distortion,
    lambda_index: usize,
    ar: bool,
    seed: u64,
) -> Result<AblationOutcome> {
    let frames = plans.iter().map(|p| p.gop_t).max().unwrap_or(1);
    let arm = |kind| -> Result<AblationRun> {
        let mut train = ClipSampler::synthetic(kinds, 64, 64, frames, seed)?;
        run_ablation(
            kind,
            cfg,
            plans,
            &mut train,
            eval_clips,
            distortion,
            lambda_index,
            ar,
            seed,
        )
    };
    Ok(AblationOutcome {
        cross_scale: arm(ModelKind::CrossScale)?,
        pixel_level: arm(ModelKind::PixelLevel)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synthetic, SyntheticSpec};
    use crate::train::LrSchedule;

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

    fn eval_clip(kind: SynthKind, seed: u64, frames: usize) -> Vec<Frame> {
        let spec = SyntheticSpec::new(kind, 64, 64, frames, seed);
        gen_synthetic(&spec).expect("synthetic clip").frames
    }

    #[test]
    fn plans_rescale_the_shared_schedule() {
        let plans = ablation_plans([10, 10, 20, 10]).expect("plans");
        assert_eq!(plans.len(), 4);
        for (plan, stage) in plans.iter().zip(SHARED_STAGES) {
            assert_eq!(plan.stage, stage);
            plan.validate().expect("rescaled plan stays valid");
        }
        assert_eq!(plans[0].iterations, 10);
        assert_eq!(plans[2].iterations, 20);

        // The desk schedule decays stage ③ halfway and stage ④ at 40%; the
        // rescaled plans keep those positions.
        assert_eq!(plans[2].lr.decay_at, Some(10));
        assert_eq!(plans[3].lr.decay_at, Some(4));

        let tiny = ablation_plans([10, 10, 1, 1]).expect("plans");
        assert_eq!(tiny[2].lr.decay_at, None);
        assert_eq!(tiny[3].lr.decay_at, None);

        assert!(ablation_plans([10, 0, 10, 10]).is_err());
    }

    #[test]
    fn stage_list_and_eval_clips_are_checked_before_training() {
        let cfg = tiny_cfg();
        let plans = ablation_plans([1, 1, 1, 1]).expect("plans");
        let clips = vec![eval_clip(SynthKind::Translate, 9, 2)];
        let mut sampler = ClipSampler::desk(1);

        let wrong_order: Vec<StagePlan> = plans.iter().rev().cloned().collect();
        let err = run_ablation(
            ModelKind::CrossScale,
            &cfg,
            &wrong_order,
            &mut sampler,
            &clips,
            Distortion::Mse,
            0,
            false,
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("shared stages"));

        let short = vec![eval_clip(SynthKind::Translate, 9, 1)];
        let err = run_ablation(
            ModelKind::CrossScale,
            &cfg,
            &plans,
            &mut sampler,
            &short,
            Distortion::Mse,
            0,
            false,
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("inter frame"));
    }

    #[test]
    fn single_arm_runs_are_deterministic() {
        let cfg = tiny_cfg();
        let mut plans = ablation_plans([1, 1, 1, 1]).expect("plans");
        for plan in &mut plans {
            plan.lr = LrSchedule::constant(1e-4);
        }
        let clips = vec![eval_clip(SynthKind::Translate, 9, 2)];

        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut sampler = ClipSampler::desk(7);
            runs.push(
                run_ablation(
                    ModelKind::CrossScale,
                    &cfg,
                    &plans,
                    &mut sampler,
                    &clips,
                    Distortion::Mse,
                    0,
                    false,
                    7,
                )
                .expect("arm runs"),
            );
        }
        assert_eq!(runs[0].rd.bpp.to_bits(), runs[1].rd.bpp.to_bits());
        assert_eq!(runs[0].rd.loss.to_bits(), runs[1].rd.loss.to_bits());
        assert_eq!(
            runs[0].motion_fraction.to_bits(),
            runs[1].motion_fraction.to_bits()
        );
        for (a, b) in runs[0].stages.iter().zip(&runs[1].stages) {
            assert_eq!(a.losses, b.losses);
        }
    }

    #[test]
    fn both_modes_train_and_round_trip() {
        let cfg = tiny_cfg();
        let mut plans = ablation_plans([1, 1, 1, 1]).expect("plans");
        for plan in &mut plans {
            plan.lr = LrSchedule::constant(1e-4);
        }
        let clips = vec![
            eval_clip(SynthKind::FastTranslate, 31, 3),
            eval_clip(SynthKind::Occluder, 32, 3),
        ];
        let kinds = [SynthKind::FastTranslate, SynthKind::Occluder];
        let outcome = compare_prediction_modes(
            &cfg,
            &plans,
            &kinds,
            &clips,
            Distortion::Mse,
            0,
            false,
            11,
        )
        .expect("comparison runs");

        for run in [&outcome.cross_scale, &outcome.pixel_level] {
            assert_eq!(run.stages.len(), 4);
            assert!(run.stages.iter().all(|s| s.losses.len() == 1));
            assert!(run.rd.bpp > 0.0, "coded clips cost bits");
            assert!(run.rd.loss.is_finite());
            assert!(
                (0.0..=1.0).contains(&run.motion_fraction),
                "motion share {} outside [0, 1]",
                run.motion_fraction
            );
        }
        assert_eq!(outcome.cross_scale.kind, ModelKind::CrossScale);
        assert_eq!(outcome.pixel_level.kind, ModelKind::PixelLevel);
    }
}
