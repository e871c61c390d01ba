//! Budget calibration sweep for the acceptance suite. Temporary tool:
//! prints the C5/C6/C7/C8 measurements at candidate iteration budgets.

use std::time::Instant;

use envc_codec::ablation::{ablation_plans, compare_prediction_modes};
use envc_codec::config::Distortion;
use envc_codec::frame::Frame;
use envc_codec::model::{Model, ModelKind};
use envc_codec::pipeline::encode_sequence;
use envc_codec::synth::{gen_synthetic, SynthKind, SyntheticSpec};
use envc_codec::train::{desk_plans, eval_true_rd, probe_loss, ClipSampler, StagePlan, Trainer};
use envc_codec::NetConfig;

const EVAL_SEED: u64 = 0x0EA7_C11F;
const PROBE_SEED: u64 = 0x5EED_0001;

fn held_out(n: usize) -> Vec<Vec<Frame>> {
    (0..n)
        .map(|i| {
            let kind = if i % 2 == 0 {
                SynthKind::FastTranslate
            } else {
                SynthKind::Occluder
            };
            let spec = SyntheticSpec::new(kind, 64, 64, 5, EVAL_SEED + i as u64);
            gen_synthetic(&spec).unwrap().frames
        })
        .collect()
}

fn probe_clips() -> Vec<Vec<Frame>> {
    [
        SynthKind::Translate,
        SynthKind::FastTranslate,
        SynthKind::Occluder,
    ]
    .iter()
    .enumerate()
    .map(|(i, &k)| {
        gen_synthetic(&SyntheticSpec::new(k, 64, 64, 5, 7700 + i as u64))
            .unwrap()
            .frames
    })
    .collect()
}

fn probe(model: &Model, clips: &[Vec<Frame>], lambda: f64) -> f64 {
    clips
        .iter()
        .map(|c| probe_loss(model, c, lambda, Distortion::Mse, false, PROBE_SEED).unwrap())
        .sum::<f64>()
        / clips.len() as f64
}

fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let xbar = (n - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xbar;
        num += dx * (y - ybar);
        den += dx * dx;
    }
    num / den
}

fn p_frame_psnr_slope(model: &Model, clips: &[Vec<Frame>]) -> f64 {
    let t_max = clips[0].len();
    let mut sums = vec![0.0; t_max];
    for clip in clips {
        let (_, stats) = encode_sequence(model, clip, clip.len(), false, 0, 0).unwrap();
        for (t, fs) in stats.frames.iter().enumerate() {
            sums[t] += fs.psnr_db;
        }
    }
    let ys: Vec<f64> = sums[1..].iter().map(|s| s / clips.len() as f64).collect();
    println!("    p-frame psnr: {ys:.3?}");
    slope(&ys)
}

fn hard_plan(idx: usize, iterations: usize) -> StagePlan {
    let mut plan = desk_plans().remove(idx);
    if let Some(at) = plan.lr.decay_at {
        let scaled = at * iterations / plan.iterations;
        plan.lr.decay_at = (scaled > 0 && scaled < iterations).then_some(scaled);
    }
    plan.iterations = iterations;
    plan.validate().unwrap();
    plan
}

fn base_run(seed: u64, budgets: [usize; 4], hard_iters: usize) {
    let heldout = held_out(5);
    let probes = probe_clips();
    let plans = ablation_plans(budgets).unwrap();
    let lambda = Distortion::Mse.lambda(1).unwrap();
    let t0 = Instant::now();

    let mut tr = Trainer::new(
        ModelKind::CrossScale,
        &NetConfig::desk(),
        Distortion::Mse,
        1,
        false,
        seed,
    )
    .unwrap();
    let mut data = ClipSampler::desk(seed);
    tr.run_stage(&plans[0], &mut data, None).unwrap();
    tr.run_stage(&plans[1], &mut data, None).unwrap();
    let p_start = probe(&tr.model, &probes, lambda);
    println!(
        "seed {seed}: stages 1-2 done {:.1}s, probe at joint start {p_start:.4}",
        t0.elapsed().as_secs_f64()
    );

    tr.run_stage(&plans[2], &mut data, None).unwrap();
    let rd_before = eval_true_rd(&tr.model, &heldout, lambda, Distortion::Mse, false).unwrap();
    let ckpt3 = std::env::temp_dir().join(format!("cal3_{seed}.envc"));
    tr.save(&ckpt3).unwrap();
    println!(
        "seed {seed}: stage 3 done {:.1}s, rd before {:.4} (bpp {:.4} d {:.6})",
        t0.elapsed().as_secs_f64(),
        rd_before.loss,
        rd_before.bpp,
        rd_before.distortion
    );

    // Modulation on/off arms from the same checkpoint and clip stream.
    let mut arm_on = Trainer::resume(&ckpt3).unwrap();
    let mut stream = ClipSampler::desk(seed ^ 0xA12);
    arm_on.run_stage(&plans[3], &mut stream, None).unwrap();
    let p_final = probe(&arm_on.model, &probes, lambda);
    println!(
        "seed {seed}: merged stage done {:.1}s, final probe {p_final:.4}, ratio {:.4}",
        t0.elapsed().as_secs_f64(),
        p_final / p_start
    );
    let slope_on = p_frame_psnr_slope(&arm_on.model, &heldout);

    let mut arm_off = Trainer::resume(&ckpt3).unwrap();
    let mut stream_off = ClipSampler::desk(seed ^ 0xA12);
    arm_off
        .run_stage_unmodulated(&plans[3], &mut stream_off, None)
        .unwrap();
    let slope_off = p_frame_psnr_slope(&arm_off.model, &heldout);
    println!(
        "seed {seed}: slopes on {slope_on:.4} off {slope_off:.4} (on-off {:.4}) {:.1}s",
        slope_on - slope_off,
        t0.elapsed().as_secs_f64()
    );

    let mut tr = arm_on;
    tr.run_stage(&hard_plan(4, hard_iters), &mut data, None)
        .unwrap();
    tr.run_stage(&hard_plan(5, hard_iters), &mut data, None)
        .unwrap();
    let rd_after = eval_true_rd(&tr.model, &heldout, lambda, Distortion::Mse, false).unwrap();
    println!(
        "seed {seed}: hard stages done {:.1}s, rd after {:.4} (bpp {:.4} d {:.6}), delta {:.4}",
        t0.elapsed().as_secs_f64(),
        rd_after.loss,
        rd_after.bpp,
        rd_after.distortion,
        rd_before.loss - rd_after.loss
    );
}

fn mode_compare(seed: u64, budgets: [usize; 4]) {
    let t0 = Instant::now();
    let heldout = held_out(5);
    let plans = ablation_plans(budgets).unwrap();
    let out = compare_prediction_modes(
        &NetConfig::desk(),
        &plans,
        &[SynthKind::FastTranslate, SynthKind::Occluder],
        &heldout,
        Distortion::Mse,
        1,
        false,
        seed,
    )
    .unwrap();
    println!(
        "seed {seed}: cross rd {:.4} bpp {:.4} frac {:.4} | pixel rd {:.4} bpp {:.4} frac {:.4} | {:.1}s",
        out.cross_scale.rd.loss,
        out.cross_scale.rd.bpp,
        out.cross_scale.motion_fraction,
        out.pixel_level.rd.loss,
        out.pixel_level.rd.bpp,
        out.pixel_level.motion_fraction,
        t0.elapsed().as_secs_f64()
    );
}

fn main() {
    let budgets = [150, 150, 150, 80];
    let hard = 60;
    println!("== base runs {budgets:?} hard {hard} ==");
    for seed in 0..3u64 {
        base_run(seed, budgets, hard);
    }
    let c7 = [100, 80, 80, 40];
    println!("== mode comparison {c7:?} ==");
    for seed in 0..3u64 {
        mode_compare(seed, c7);
    }
}
