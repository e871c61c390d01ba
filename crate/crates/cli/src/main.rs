//! `envc` command line: encode/decode between RVF clips and ENVC
//! bitstreams, staged training, quality metrics, BD-rate between CSV
//! curves, synthetic clip generation, the prediction-mode comparison, and
//! diagnostic image dumps.
//!
//! Stats are CSV on stdout (or `--out` where the subcommand has no other
//! file output); progress goes to stderr. Every failure maps to the exit
//! code of its domain, listed in `--help`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use envc_codec::ablation::{ablation_plans, compare_prediction_modes, run_ablation, AblationRun};
use envc_codec::bdrate::{bd_rate, RdPoint};
use envc_codec::checkpoint::load_checkpoint;
use envc_codec::config::{parse_kv, Distortion, NetConfig};
use envc_codec::error::{CodecError, Result};
use envc_codec::frame::{read_rvf, write_rvf, Frame};
use envc_codec::metrics;
use envc_codec::model::{build_model, FrameKind, Model, ModelKind};
use envc_codec::pipeline::{decode_sequence, encode_sequence};
use envc_codec::synth::{gen_synthetic, SynthKind, SyntheticSpec};
use envc_codec::train::{
    desk_plans, paper_plans, plan_by_name, ClipSampler, StagePlan, Trainer,
};
use envc_codec::viz::dump_visualizations;

const EXIT_CODES: &str = "Exit codes:
  0   success
  2   usage error (unknown flag, unknown subcommand, malformed argument)
  3   I/O failure (missing file, unwritable output)
  4   malformed input file (RVF, CSV, or checkpoint contents)
  5   corrupt or truncated bitstream
  6   invalid configuration
  7   dimension mismatch between inputs
  8   checkpoint identity mismatch
  9   training-schedule violation
  10  numeric engine failure";

fn exit_for(err: &CodecError) -> u8 {
    match err {
        CodecError::Io(_) => 3,
        CodecError::Format(_) => 4,
        CodecError::Stream(_) => 5,
        CodecError::Config(_) => 6,
        CodecError::Dimension(_) => 7,
        CodecError::CheckpointMismatch(_) => 8,
        CodecError::Train(_) => 9,
        CodecError::Core(_) => 10,
    }
}

#[derive(Parser)]
#[command(
    name = "envc",
    version,
    about = "Neural video codec with cross-scale feature prediction",
    after_help = EXIT_CODES
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode an RVF clip into an ENVC bitstream
    Encode(EncodeArgs),
    /// Decode an ENVC bitstream back to RVF
    Decode(DecodeArgs),
    /// Train a model through the staged schedule
    Train(TrainArgs),
    /// Per-frame and mean PSNR / MS-SSIM between two RVF clips
    Metrics(MetricsArgs),
    /// BD-rate between two rate-quality curves given as CSV
    Bdrate(BdrateArgs),
    /// Generate a synthetic RVF clip
    Synth(SynthArgs),
    /// Matched-budget comparison of the two prediction modes
    Ablate(AblateArgs),
    /// Dump weight maps, displacement fields, and prediction frames as PPM
    Viz(VizArgs),
}

#[derive(Args)]
struct EncodeArgs {
    /// Input clip (RVF)
    input: PathBuf,
    /// Trained model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output bitstream path
    #[arg(long)]
    out: PathBuf,
    /// GoP size: an I-frame every `gop` frames
    #[arg(long, default_value_t = 12)]
    gop: usize,
    /// Autoregressive motion context (default: checkpoint setting)
    #[arg(long, value_name = "on|off", value_parser = parse_on_off)]
    ar: Option<bool>,
    /// Rate point 0..=4 (default: checkpoint setting)
    #[arg(long)]
    lambda_index: Option<usize>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Input bitstream (ENVC)
    input: PathBuf,
    /// Checkpoint the stream was encoded with
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output clip path (RVF)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(after_help = "Config keys (key=value, one per line, # comments):
  preset        desk | paper (network size, stage budgets, crop) [desk]
  distortion    mse | msssim [mse]
  lambda_index  rate point 0..=4 [1]
  seed          training seed [0]
  ar            on | off, autoregressive motion context [off]
  stages        all | none | comma list of stage names [all]
  iterations    comma list overriding each selected stage's budget
  clip          path to an RVF training clip (repeatable)

Stage names: i_frame_pretrain, p_frame_pretrain, joint_t3,
joint_t5_i_hard, motion_hard, residual_hard.

Flags override their config keys. The training log is CSV with one row
per iteration (rate and distortion per coded frame, then the loss).")]
struct TrainArgs {
    /// Plain-text key=value training config
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network/schedule preset (overrides the config key)
    #[arg(long, value_parser = ["desk", "paper"])]
    preset: Option<String>,
    /// Rate point 0..=4 (overrides the config key)
    #[arg(long)]
    lambda_index: Option<usize>,
    /// Training seed (overrides the config key)
    #[arg(long)]
    seed: Option<u64>,
    /// Autoregressive motion context (overrides the config key)
    #[arg(long, value_name = "on|off", value_parser = parse_on_off)]
    ar: Option<bool>,
    /// Continue from an existing checkpoint instead of initializing
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write the training-log CSV here instead of stdout
    #[arg(long)]
    log: Option<PathBuf>,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Reference clip (RVF)
    reference: PathBuf,
    /// Clip under test (RVF)
    decoded: PathBuf,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(after_help = "Curve CSVs need a header naming a rate column \
(`rate` or `bpp`) and a quality column (`quality`, `psnr_db`, or \
`msssim`), then one row per rate point. Output is the BD-rate of the \
test curve against the anchor, in percent; negative means the test \
codec spends fewer bits at equal quality.")]
struct BdrateArgs {
    /// Anchor curve (CSV)
    anchor: PathBuf,
    /// Test curve (CSV)
    test: PathBuf,
    /// Quality column to use
    #[arg(long, default_value = "psnr", value_parser = ["psnr", "msssim"])]
    quality: String,
}

#[derive(Args)]
struct SynthArgs {
    /// Motion pattern
    #[arg(long, value_parser = parse_synth_kind)]
    kind: SynthKind,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-frame motion in pixels as `dx,dy` (default: the kind's own)
    #[arg(long, value_parser = parse_motion)]
    magnitude: Option<Motion>,
    /// Output clip path (RVF)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(after_help = "Trains one fresh model per prediction mode through \
the four shared stages (desk preset, fast_translate + occluder clips), \
then codes the held-out clips and reports rate, distortion, RD loss, and \
the motion share of inter-frame bits as CSV. Without clip arguments a \
five-clip held-out suite is generated from the seed.")]
struct AblateArgs {
    /// Held-out evaluation clips (RVF)
    clips: Vec<PathBuf>,
    #[arg(long, default_value = "both", value_parser = ["both", "cross_scale", "pixel_level"])]
    mode: String,
    /// Rate point 0..=4
    #[arg(long, default_value_t = 1)]
    lambda_index: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Autoregressive motion context
    #[arg(long, value_name = "on|off", value_parser = parse_on_off, default_value = "off")]
    ar: bool,
    /// Distortion metric for the RD objective
    #[arg(long, default_value = "mse", value_parser = parse_distortion)]
    distortion: Distortion,
    /// Iterations for the four shared stages
    #[arg(long, default_value = "2000,2000,2000,1000", value_parser = parse_budget)]
    budget: Budget,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VizArgs {
    /// Input clip (RVF) supplying the frame pair
    input: PathBuf,
    /// Trained checkpoint (default: freshly initialized model)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Preset for the fresh model when no checkpoint is given
    #[arg(long, default_value = "desk", value_parser = ["desk", "paper"])]
    preset: String,
    /// Seed for the fresh model when no checkpoint is given
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frame indices `reference,current`
    #[arg(long, default_value = "0,1", value_parser = parse_pair)]
    pair: FramePair,
    /// Output directory for the PPM files and sidecar notes
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy)]
struct Motion(f64, f64);

#[derive(Clone, Copy)]
struct Budget([usize; 4]);

#[derive(Clone, Copy)]
struct FramePair(usize, usize);

fn parse_on_off(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected 'on' or 'off', got '{other}'")),
    }
}

fn parse_synth_kind(s: &str) -> std::result::Result<SynthKind, String> {
    SynthKind::parse(s)
        .ok_or_else(|| format!("expected translate, fast_translate, or occluder, got '{s}'"))
}

fn parse_distortion(s: &str) -> std::result::Result<Distortion, String> {
    Distortion::parse(s).map_err(|e| e.to_string())
}

fn parse_motion(s: &str) -> std::result::Result<Motion, String> {
    let (dx, dy) = s
        .split_once(',')
        .ok_or_else(|| format!("expected 'dx,dy', got '{s}'"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| format!("bad number '{v}' in '{s}'"))
    };
    Ok(Motion(parse(dx)?, parse(dy)?))
}

fn parse_budget(s: &str) -> std::result::Result<Budget, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected four comma-separated counts, got '{s}'"));
    }
    let mut out = [0usize; 4];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("bad count '{part}' in '{s}'"))?;
    }
    Ok(Budget(out))
}

fn parse_pair(s: &str) -> std::result::Result<FramePair, String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected 'ref,cur', got '{s}'"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad index '{v}' in '{s}'"))
    };
    Ok(FramePair(parse(a)?, parse(b)?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Exits 0 for --help/--version and 2 for usage errors.
        Err(err) => err.exit(),
    };
    let result = match cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Train(a) => cmd_train(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Bdrate(a) => cmd_bdrate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Viz(a) => cmd_viz(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("envc: {err}");
            ExitCode::from(exit_for(&err))
        }
    }
}

/// Prints to stdout unless a path is given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(CodecError::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn kind_label(kind: FrameKind) -> &'static str {
    match kind {
        FrameKind::Intra => "I",
        FrameKind::Predicted => "P",
    }
}

fn on_off(v: bool) -> &'static str {
    if v {
        "on"
    } else {
        "off"
    }
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let frames = read_rvf(&a.input)?;
    let ar = a.ar.unwrap_or(meta.ar);
    let lambda_index = a.lambda_index.unwrap_or(meta.lambda_index);
    let (stream, stats) = encode_sequence(&model, &frames, a.gop, ar, lambda_index, meta.digest)?;
    fs::write(&a.out, &stream)?;

    let motion_total: usize = stats.frames.iter().map(|f| f.motion_bytes).sum();
    let mut csv = String::from("frame,kind,bytes,motion_bytes,ideal_bits,psnr_db,bpp,msssim\n");
    for (i, f) in stats.frames.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{},{},{:.1},{:.4},,\n",
            kind_label(f.kind),
            f.bytes,
            f.motion_bytes,
            f.ideal_bits,
            f.psnr_db
        ));
    }
    csv.push_str(&format!(
        "sequence,,{},{},,{:.4},{:.6},{:.6}\n",
        stats.total_bytes, motion_total, stats.psnr_db, stats.bpp, stats.msssim
    ));
    print!("{csv}");
    eprintln!(
        "encoded {} frames to {} ({} bytes, {:.4} bpp)",
        frames.len(),
        a.out.display(),
        stream.len(),
        stats.bpp
    );
    Ok(())
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let bytes = fs::read(&a.input)?;
    let (frames, header) = decode_sequence(&model, &bytes, Some(meta.digest))?;
    write_rvf(&a.out, &frames)?;
    println!("frames,width,height,gop,ar,lambda_index");
    println!(
        "{},{},{},{},{},{}",
        frames.len(),
        header.width,
        header.height,
        header.gop,
        on_off(header.ar),
        header.lambda_index
    );
    eprintln!("decoded {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let reference = read_rvf(&a.reference)?;
    let decoded = read_rvf(&a.decoded)?;
    if reference.len() != decoded.len() {
        return Err(CodecError::dimension(format!(
            "clips have {} and {} frames",
            reference.len(),
            decoded.len()
        )));
    }
    let mut csv = String::from("frame,psnr_db,msssim\n");
    for (i, (r, d)) in reference.iter().zip(&decoded).enumerate() {
        csv.push_str(&format!(
            "{i},{:.4},{:.6}\n",
            metrics::psnr(r, d)?,
            metrics::ms_ssim(r, d)?
        ));
    }
    csv.push_str(&format!(
        "mean,{:.4},{:.6}\n",
        metrics::sequence_psnr(&reference, &decoded)?,
        metrics::sequence_ms_ssim(&reference, &decoded)?
    ));
    emit(a.out.as_deref(), &csv)
}

fn cmd_bdrate(a: BdrateArgs) -> Result<()> {
    let anchor = read_rd_csv(&a.anchor, &a.quality)?;
    let test = read_rd_csv(&a.test, &a.quality)?;
    println!("{:.2}", bd_rate(&anchor, &test)?);
    Ok(())
}

/// Reads a rate-quality curve from CSV by header name; extra columns are
/// ignored.
fn read_rd_csv(path: &Path, quality: &str) -> Result<Vec<RdPoint>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| CodecError::format(format!("{}: empty CSV", path.display())))?;
    let cols: Vec<String> = header
        .split(',')
        .map(|c| c.trim().to_ascii_lowercase())
        .collect();
    let find = |names: &[&str]| {
        names
            .iter()
            .find_map(|n| cols.iter().position(|c| c == n))
    };
    let rate_col = find(&["rate", "bpp"]).ok_or_else(|| {
        CodecError::format(format!("{}: no rate/bpp column in '{header}'", path.display()))
    })?;
    let quality_names: &[&str] = match quality {
        "msssim" => &["msssim", "quality"],
        _ => &["psnr_db", "psnr", "quality"],
    };
    let quality_col = find(quality_names).ok_or_else(|| {
        CodecError::format(format!(
            "{}: no {} column in '{header}'",
            path.display(),
            quality
        ))
    })?;

    let mut points = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |col: usize| {
            fields
                .get(col)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| {
                    CodecError::format(format!(
                        "{}:{}: bad number in '{line}'",
                        path.display(),
                        lineno + 1
                    ))
                })
        };
        points.push(RdPoint::new(get(rate_col)?, get(quality_col)?));
    }
    Ok(points)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = SyntheticSpec::new(a.kind, a.width, a.height, a.frames, a.seed);
    if let Some(Motion(dx, dy)) = a.magnitude {
        spec.magnitude = (dx, dy);
    }
    let clip = gen_synthetic(&spec)?;
    write_rvf(&a.out, &clip.frames)?;
    println!("kind,width,height,frames,seed,dx,dy");
    println!(
        "{},{},{},{},{},{},{}",
        a.kind.name(),
        a.width,
        a.height,
        a.frames,
        a.seed,
        spec.magnitude.0,
        spec.magnitude.1
    );
    Ok(())
}

/// Training settings assembled from the config file with flag overrides.
struct TrainSettings {
    preset: String,
    distortion: Distortion,
    lambda_index: usize,
    seed: u64,
    ar: bool,
    stages: Vec<String>,
    iterations: Vec<usize>,
    clips: Vec<PathBuf>,
}

impl TrainSettings {
    fn from_args(a: &TrainArgs) -> Result<Self> {
        let mut s = TrainSettings {
            preset: "desk".to_string(),
            distortion: Distortion::Mse,
            lambda_index: 1,
            seed: 0,
            ar: false,
            stages: vec!["all".to_string()],
            iterations: Vec::new(),
            clips: Vec::new(),
        };
        if let Some(path) = &a.config {
            for (key, value) in parse_kv(&fs::read_to_string(path)?)? {
                match key.as_str() {
                    "preset" => {
                        NetConfig::preset(&value)?;
                        s.preset = value;
                    }
                    "distortion" => s.distortion = Distortion::parse(&value)?,
                    "lambda_index" => s.lambda_index = parse_num(&key, &value)?,
                    "seed" => s.seed = parse_num(&key, &value)?,
                    "ar" => {
                        s.ar = parse_on_off(&value).map_err(CodecError::config)?;
                    }
                    "stages" => {
                        s.stages = value
                            .split(',')
                            .map(|v| v.trim().to_string())
                            .filter(|v| !v.is_empty())
                            .collect();
                    }
                    "iterations" => {
                        s.iterations = value
                            .split(',')
                            .map(|v| parse_num(&key, v.trim()))
                            .collect::<Result<_>>()?;
                    }
                    "clip" => s.clips.push(PathBuf::from(value)),
                    other => {
                        return Err(CodecError::config(format!(
                            "unknown config key '{other}'"
                        )))
                    }
                }
            }
        }
        if let Some(p) = &a.preset {
            s.preset = p.clone();
        }
        if let Some(i) = a.lambda_index {
            s.lambda_index = i;
        }
        if let Some(seed) = a.seed {
            s.seed = seed;
        }
        if let Some(ar) = a.ar {
            s.ar = ar;
        }
        Ok(s)
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CodecError::config(format!("bad value '{value}' for '{key}'")))
}

/// Resolves the stage list against a preset's plans, applying any
/// per-stage iteration overrides (learning-rate decay points move to the
/// same relative position).
fn select_plans(settings: &TrainSettings) -> Result<Vec<StagePlan>> {
    let all = match settings.preset.as_str() {
        "paper" => paper_plans(),
        _ => desk_plans(),
    };
    let mut selected = match settings.stages.as_slice() {
        [one] if one == "all" => all,
        [one] if one == "none" => Vec::new(),
        names => names
            .iter()
            .map(|name| {
                plan_by_name(&all, name).ok_or_else(|| {
                    CodecError::config(format!("unknown stage '{name}'"))
                })
            })
            .collect::<Result<_>>()?,
    };
    if !settings.iterations.is_empty() {
        if settings.iterations.len() != selected.len() {
            return Err(CodecError::config(format!(
                "{} iteration overrides for {} stages",
                settings.iterations.len(),
                selected.len()
            )));
        }
        for (plan, &iters) in selected.iter_mut().zip(&settings.iterations) {
            if iters == 0 {
                return Err(CodecError::config("iteration overrides must be positive"));
            }
            if let Some(at) = plan.lr.decay_at {
                let scaled = at * iters / plan.iterations;
                plan.lr.decay_at = (scaled > 0 && scaled < iters).then_some(scaled);
            }
            plan.iterations = iters;
        }
    }
    Ok(selected)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let settings = TrainSettings::from_args(&a)?;
    let plans = select_plans(&settings)?;

    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(path)?,
        None => Trainer::new(
            ModelKind::CrossScale,
            &NetConfig::preset(&settings.preset)?,
            settings.distortion,
            settings.lambda_index,
            settings.ar,
            settings.seed,
        )?,
    };
    eprintln!(
        "model {} preset {} distortion {} lambda_index {} ar {} seed {} (stage tag {})",
        trainer.model.kind.name(),
        settings.preset,
        trainer.distortion.name(),
        trainer.lambda_index,
        on_off(trainer.ar),
        trainer.seed,
        trainer.stage_tag
    );

    let crop = if settings.preset == "paper" { 192 } else { 64 };
    let frames = plans.iter().map(|p| p.gop_t).max().unwrap_or(5);
    let mut sampler = ClipSampler::synthetic(
        &[
            SynthKind::Translate,
            SynthKind::FastTranslate,
            SynthKind::Occluder,
        ],
        crop,
        crop,
        frames,
        trainer.seed,
    )?;
    for path in &settings.clips {
        sampler.push_clip(read_rvf(path)?)?;
    }

    let mut log: Box<dyn Write> = match &a.log {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(std::io::stdout()),
    };
    for plan in &plans {
        eprintln!(
            "stage {}: {} iterations at T={}",
            plan.stage.name(),
            plan.iterations,
            plan.gop_t
        );
        let report = trainer.run_stage(plan, &mut sampler, Some(log.as_mut()))?;
        eprintln!(
            "stage {}: loss {:.4} -> {:.4}",
            plan.stage.name(),
            report.first_loss(),
            report.last_loss()
        );
    }

    let digest = trainer.save(&a.out)?;
    eprintln!(
        "checkpoint {} (digest {digest:#018x}, stage tag {})",
        a.out.display(),
        trainer.stage_tag
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let plans = ablation_plans(a.budget.0)?;
    let kinds = [SynthKind::FastTranslate, SynthKind::Occluder];
    let eval_clips: Vec<Vec<Frame>> = if a.clips.is_empty() {
        held_out_suite(&kinds, a.seed)?
    } else {
        a.clips
            .iter()
            .map(|p| read_rvf(p))
            .collect::<Result<_>>()?
    };

    let lambda = a.distortion.lambda(a.lambda_index)?;
    let mut runs: Vec<AblationRun> = Vec::new();
    if a.mode == "both" {
        let outcome = compare_prediction_modes(
            &NetConfig::desk(),
            &plans,
            &kinds,
            &eval_clips,
            a.distortion,
            a.lambda_index,
            a.ar,
            a.seed,
        )?;
        runs.push(outcome.cross_scale);
        runs.push(outcome.pixel_level);
    } else {
        let kind = ModelKind::parse(&a.mode).expect("mode restricted by the parser");
        let frames = plans.iter().map(|p| p.gop_t).max().unwrap_or(1);
        let mut train = ClipSampler::synthetic(&kinds, 64, 64, frames, a.seed)?;
        runs.push(run_ablation(
            kind,
            &NetConfig::desk(),
            &plans,
            &mut train,
            &eval_clips,
            a.distortion,
            a.lambda_index,
            a.ar,
            a.seed,
        )?);
    }

    let mut csv = String::from("mode,seed,lambda,bpp,distortion,rd_loss,motion_fraction\n");
    for run in &runs {
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6e},{:.6},{:.4}\n",
            run.kind.name(),
            run.seed,
            lambda,
            run.rd.bpp,
            run.rd.distortion,
            run.rd.loss,
            run.motion_fraction
        ));
    }
    emit(a.out.as_deref(), &csv)
}

/// Five held-out clips alternating between the suite's motion kinds, from
/// seeds disjoint with the training sampler's stream.
fn held_out_suite(kinds: &[SynthKind], seed: u64) -> Result<Vec<Vec<Frame>>> {
    (0..5)
        .map(|i| {
            let kind = kinds[i % kinds.len()];
            let spec = SyntheticSpec::new(kind, 64, 64, 5, seed ^ (0x0EA7_C11F + i as u64));
            Ok(gen_synthetic(&spec)?.frames)
        })
        .collect()
}

fn cmd_viz(a: VizArgs) -> Result<()> {
    let model: Model = match &a.checkpoint {
        Some(path) => load_checkpoint(path)?.0,
        None => build_model(
            ModelKind::CrossScale,
            &NetConfig::preset(&a.preset)?,
            a.seed,
        )?,
    };
    let frames = read_rvf(&a.input)?;
    let FramePair(r, c) = a.pair;
    if r >= frames.len() || c >= frames.len() {
        return Err(CodecError::dimension(format!(
            "frame pair {r},{c} out of range for a {}-frame clip",
            frames.len()
        )));
    }
    let report = dump_visualizations(&model, &frames[r], &frames[c], &a.out)?;

    let mut csv = String::from("key,value\n");
    csv.push_str(&format!("weight_sum_min,{:.6}\n", report.weight_sum_range.0));
    csv.push_str(&format!("weight_sum_max,{:.6}\n", report.weight_sum_range.1));
    for (i, m) in report.max_flow.iter().enumerate() {
        csv.push_str(&format!("max_flow_scale{},{:.6}\n", i + 1, m));
    }
    csv.push_str(&format!(
        "prediction_scale_gap,{:.6}\n",
        report.prediction_scale_gap
    ));
    for file in &report.files {
        csv.push_str(&format!("file,{}\n", file.display()));
    }
    print!("{csv}");
    Ok(())
}
