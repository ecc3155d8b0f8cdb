//! Command-line entry point: train, eval, predict, ablate, bench, synth.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

use clap::{Args, Parser, Subcommand};
use spike::checkpoint::{load_checkpoint, save_checkpoint};
use spike::config::RunConfig;
use spike::data::{
    generate_synthetic, load_native, make_sequence, save_native, OcclusionMode, Recording,
    SequenceDataset, SyntheticRigConfig,
};
use spike::eval::{benchmark_inference, SkeletonFrame};
use spike::model::{build_forward, forward, ConvMode, HyperParams, ModelParams, WindowMode};
use spike::plot::render_svg;
use spike::preprocess::center_sequence;
use spike::tensor::Tape;
use spike::tokenizer::tokenize;
use spike::training::{evaluate, train};
use spike::{Result, SpikeError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "spike", about = "3D human keypoint regression from point cloud sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Plain-text key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory in the native layout.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model checkpoint path.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (directory or file depending on the command).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra key=value config overrides; flags beat the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus the resolved config.
    Train(Common),
    /// Evaluate a checkpoint and print the mAP report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// mAP distance threshold in metres.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Predict joints for one frame; prints 15 lines of 3 floats.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Recording index within the dataset.
        #[arg(long, default_value_t = 0)]
        recording: usize,
        /// Target frame index; defaults to the recording's last frame.
        #[arg(long)]
        frame: Option<usize>,
        /// Writes an SVG skeleton plot here.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Sweep T x window mode x conv mode at toy scale and report a grid.
    Ablate(Common),
    /// Measure inference latency for a checkpoint.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 50)]
        iters: usize,
    },
    /// Generate a synthetic dataset in the native layout.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        sequences: usize,
        #[arg(long, default_value_t = 4)]
        frames: usize,
        #[arg(long, default_value_t = 512)]
        points: usize,
        /// Hide one arm in each recording's final frame.
        #[arg(long)]
        occlusion: bool,
    },
}

fn exit_code(e: &SpikeError) -> u8 {
    match e {
        SpikeError::Config(_) | SpikeError::Dimension(_) => 2,
        SpikeError::Data(_) | SpikeError::Io(_) => 3,
        SpikeError::Numeric(_) => 4,
    }
}

/// Worker cap from the environment; the pipeline currently runs single
/// threaded, so the value is validated and clamped but acts as an upper
/// bound rather than a demand.
fn spike_threads() -> Result<usize> {
    match std::env::var("SPIKE_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| SpikeError::Config(format!("SPIKE_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(1),
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig<f32>> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for s in &common.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| SpikeError::Config(format!("--set expects key=value, got '{s}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_data(common: &Common) -> Result<SequenceDataset<f32>> {
    let path = common
        .data
        .as_ref()
        .ok_or_else(|| SpikeError::Config("missing required --data flag".into()))?;
    if !path.is_dir() {
        return Err(SpikeError::Config(format!("data directory {} does not exist", path.display())));
    }
    load_native(path)
}

fn require_checkpoint(common: &Common) -> Result<(ModelParams<f32>, HyperParams<f32>)> {
    let path = common
        .checkpoint
        .as_ref()
        .ok_or_else(|| SpikeError::Config("missing required --checkpoint flag".into()))?;
    if !path.is_file() {
        return Err(SpikeError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    load_checkpoint(path)
}

/// Holds out 10% of training subjects (at least one, when possible) for
/// checkpoint selection.
fn train_val_split(ds: &SequenceDataset<f32>) -> (SequenceDataset<f32>, Option<SequenceDataset<f32>>) {
    let mut subjects: Vec<u32> = ds.recordings.iter().map(|r| r.subject).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 2 {
        return (ds.clone(), None);
    }
    let n_val = (subjects.len() / 10).max(1);
    let val_subjects = &subjects[subjects.len() - n_val..];
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for r in &ds.recordings {
        if val_subjects.contains(&r.subject) {
            va.push(r.clone());
        } else {
            tr.push(r.clone());
        }
    }
    (SequenceDataset { recordings: tr }, Some(SequenceDataset { recordings: va }))
}

fn cmd_train(common: &Common) -> Result<()> {
    let mut cfg = resolve_config(common)?;
    let ds = require_data(common)?;
    let out_dir = common.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    std::fs::create_dir_all(&out_dir)?;
    cfg.train.checkpoint_path = Some(out_dir.join("checkpoint.spk"));
    std::fs::write(out_dir.join("resolved.cfg"), cfg.dump())?;

    let (train_ds, val_ds) = train_val_split(&ds);
    let outcome = train(&train_ds, val_ds.as_ref(), &cfg.hp, &cfg.train)?;

    let log: String = outcome.records.iter().map(|r| r.log_line() + "\n").collect();
    std::fs::write(out_dir.join("train.log"), &log)?;
    // always leave a checkpoint behind, even if no epoch improved val mAP
    let ckpt = out_dir.join("checkpoint.spk");
    if !ckpt.is_file() {
        save_checkpoint(&outcome.params, &cfg.hp, &ckpt)?;
    }
    save_checkpoint(&outcome.params, &cfg.hp, &out_dir.join("last.spk"))?;
    Ok(())
}

fn cmd_eval(common: &Common, threshold: Option<f64>) -> Result<()> {
    let cfg = resolve_config(common)?;
    let (params, hp) = require_checkpoint(common)?;
    let ds = require_data(common)?;
    let threshold = threshold.unwrap_or(cfg.train.map_threshold_m);
    let samples = ds.samples(cfg.train.final_frame_only);
    let report = evaluate(&ds, &samples, &hp, &params, cfg.train.seed, threshold)?;
    print!("{}", report.table());
    print!("{}", report.structured());
    if let Some(out) = &common.out {
        std::fs::write(out, format!("{}{}", report.table(), report.structured()))?;
    }
    Ok(())
}

fn cmd_predict(
    common: &Common,
    recording: usize,
    frame: Option<usize>,
    plot: Option<&Path>,
) -> Result<()> {
    let cfg = resolve_config(common)?;
    let (params, hp) = require_checkpoint(common)?;
    let ds = require_data(common)?;
    let rec: &Recording<f32> = ds
        .recordings
        .get(recording)
        .ok_or_else(|| SpikeError::Data(format!("recording index {recording} out of range")))?;
    let t_index = frame.unwrap_or(rec.frames.len() - 1);
    if t_index >= rec.frames.len() {
        return Err(SpikeError::Data(format!("frame index {t_index} out of range")));
    }
    let (seq, _target) = make_sequence(rec, t_index, &hp, cfg.train.seed)?;
    let (seq, c) = center_sequence(&seq)?;
    let out = forward(&seq, &hp, &params, cfg.train.seed)?;
    // un-center: model output lives in centroid-relative coordinates
    let joints: Vec<[f32; 3]> =
        out.joints.iter().map(|p| [p[0] + c[0], p[1] + c[1], p[2] + c[2]]).collect();
    for p in &joints {
        println!("{} {} {}", p[0], p[1], p[2]);
    }
    if let Some(plot_path) = plot {
        let pred = SkeletonFrame::new(joints, vec![true; out.joints.len()])?;
        let svg = render_svg(&rec.frames[t_index].cloud, &pred, Some(&rec.frames[t_index].labels));
        std::fs::write(plot_path, svg)?;
    }
    Ok(())
}

/// Peak tape size of one training-style forward pass, used as the ablation
/// grid's memory proxy.
fn forward_bytes(ds: &SequenceDataset<f32>, hp: &HyperParams<f32>, params: &ModelParams<f32>, seed: u64) -> Result<usize> {
    let rec = &ds.recordings[0];
    let (seq, _) = make_sequence(rec, rec.frames.len() - 1, hp, seed)?;
    let (seq, _) = center_sequence(&seq)?;
    let tokens = tokenize(&seq, hp, seed)?;
    let mut tape = Tape::new();
    build_forward(&mut tape, &seq, &tokens, hp, params, true)?;
    Ok(tape.bytes())
}

fn cmd_ablate(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let ds = require_data(common)?;
    let mut lines = Vec::new();
    for t in [1usize, 2, 3, 4] {
        for window_mode in [WindowMode::PastOnly, WindowMode::PastFuture] {
            for conv_mode in [ConvMode::Spatial, ConvMode::SpatioTemporal] {
                // temporal kernel cannot exceed the window; clamp to the
                // largest odd size that fits
                let k_t = if conv_mode == ConvMode::SpatioTemporal {
                    3.min(if t % 2 == 1 { t } else { t - 1 })
                } else {
                    1
                };
                let hp = HyperParams { t, window_mode, conv_mode, k_t, ..cfg.hp.clone() };
                let outcome = train(&ds, None, &hp, &cfg.train)?;
                let samples = ds.samples(cfg.train.final_frame_only);
                let report = evaluate(&ds, &samples, &hp, &outcome.params, cfg.train.seed, cfg.train.map_threshold_m)?;
                let mem = forward_bytes(&ds, &hp, &outcome.params, cfg.train.seed)?;
                let wm = if window_mode == WindowMode::PastOnly { "past_only" } else { "past_future" };
                let cm = if conv_mode == ConvMode::Spatial { "spatial" } else { "spatio_temporal" };
                let line = format!(
                    "t={t} window={wm} conv={cm} map={:.4} peak_mem_bytes={mem}",
                    report.mean_ap
                );
                println!("{line}");
                lines.push(line);
            }
        }
    }
    if let Some(out) = &common.out {
        std::fs::write(out, lines.join("\n") + "\n")?;
    }
    Ok(())
}

fn cmd_bench(common: &Common, warmup: usize, iters: usize) -> Result<()> {
    let cfg = resolve_config(common)?;
    let (params, hp) = require_checkpoint(common)?;
    let ds = match &common.data {
        Some(_) => require_data(common)?,
        None => {
            let synth_cfg = SyntheticRigConfig {
                frames_per_recording: hp.t.max(2),
                points_per_frame: hp.n,
                ..Default::default()
            };
            generate_synthetic(&synth_cfg, 1, cfg.train.seed)?
        }
    };
    let rec = &ds.recordings[0];
    let (seq, _) = make_sequence(rec, rec.frames.len() - 1, &hp, cfg.train.seed)?;
    let (seq, _) = center_sequence(&seq)?;
    let report = benchmark_inference(
        || {
            std::hint::black_box(forward(&seq, &hp, &params, cfg.train.seed).unwrap());
        },
        warmup,
        iters,
        hp.t,
    )?;
    println!("{}", report.structured());
    if let Some(out) = &common.out {
        std::fs::write(out, report.structured() + "\n")?;
    }
    Ok(())
}

fn cmd_synth(common: &Common, sequences: usize, frames: usize, points: usize, occlusion: bool) -> Result<()> {
    let out = common
        .out
        .as_ref()
        .ok_or_else(|| SpikeError::Config("synth requires --out directory".into()))?;
    let cfg = SyntheticRigConfig::<f32> {
        frames_per_recording: frames,
        points_per_frame: points,
        occlusion: if occlusion { OcclusionMode::HideArmCurrentFrame } else { OcclusionMode::None },
        ..Default::default()
    };
    let seed = common.seed.unwrap_or(0);
    let ds = generate_synthetic(&cfg, sequences, seed)?;
    save_native(&ds, out)?;
    println!("wrote {} recordings ({} frames) to {}", ds.recordings.len(), ds.frame_count(), out.display());
    Ok(())
}

fn run() -> Result<()> {
    spike_threads()?;
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Eval { common, threshold } => cmd_eval(common, *threshold),
        Command::Predict { common, recording, frame, plot } => {
            cmd_predict(common, *recording, *frame, plot.as_deref())
        }
        Command::Ablate(c) => cmd_ablate(c),
        Command::Bench { common, warmup, iters } => cmd_bench(common, *warmup, *iters),
        Command::Synth { common, sequences, frames, points, occlusion } => {
            cmd_synth(common, *sequences, *frames, *points, *occlusion)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
