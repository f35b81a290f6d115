//! `stmd`: synthesise sequences, run detectors, score them, sweep parameters
//! and time the pipelines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use stmd_core::eval::evaluate;
use stmd_core::experiment::{run_detector, run_sweep, sweep_csv};
use stmd_core::io::{
    atomic_write, encode_detections, read_detections, read_frames, read_track, write_frames, write_track,
    DetectionsHeader,
};
use stmd_core::ops;
use stmd_core::synthgen::{generate_sequence, SynthConfig, TargetPath};
use stmd_core::{DetectorKind, PipelineConfig};

#[derive(Parser, Debug)]
#[command(name = "stmd", version, about = "Small-target motion detection toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides `synth.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (bench always uses one).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Overrides the configured detector.
    #[arg(long, global = true, value_name = "NAME")]
    detector: Option<DetectorKind>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the configured synthetic sequence as PGM frames plus a track file.
    Synth,
    /// Run a detector over a frame directory (or the configured synthetic
    /// sequence) and write JSON-lines detections.
    Detect {
        /// Directory of 8-bit grayscale PGM/PNG frames, read in name order.
        #[arg(long, value_name = "DIR")]
        input: Option<PathBuf>,
    },
    /// Score a detections file against a track file.
    Eval {
        #[arg(value_name = "DETECTIONS")]
        detections: PathBuf,
        #[arg(value_name = "TRACK")]
        track: PathBuf,
    },
    /// Run the factorial parameter sweep and write a long-format CSV.
    Sweep,
    /// Time detectors single-threaded on synthetic frames and count operations.
    Bench,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = resolve_config(&cli.common)?;
    std::fs::create_dir_all(&cli.common.out).with_context(|| format!("creating {}", cli.common.out.display()))?;
    let out = cli.common.out.as_path();
    match cli.command {
        Command::Synth => synth(&cfg, out),
        Command::Detect { input } => detect(&cfg, input.as_deref(), out),
        Command::Eval { detections, track } => eval(&cfg, &detections, &track, out),
        Command::Sweep => sweep(&cfg, cli.common.threads, cli.common.detector, out),
        Command::Bench => bench(&cfg, cli.common.detector, out),
    }
}

/// File, then environment, then flags; validated before anything runs.
fn resolve_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_process_env()?;
    if let Some(seed) = common.seed {
        cfg.synth.seed = seed;
    }
    if let Some(d) = common.detector {
        cfg.detector = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    atomic_write(&out.join("config.toml"), cfg.to_toml_string().as_bytes())?;
    Ok(())
}

fn synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let seq = generate_sequence(&cfg.synth)?;
    write_frames(&out.join("frames"), &seq.frames)?;
    write_track(&out.join("track.jsonl"), &seq.track)?;
    write_config(cfg, out)?;
    let s = &cfg.synth;
    println!(
        "synth: {} frames {}x{} seed {} config {} -> {}",
        s.frames,
        s.width,
        s.height,
        s.seed,
        cfg.hash(),
        out.display()
    );
    Ok(())
}

fn detect(cfg: &PipelineConfig, input: Option<&Path>, out: &Path) -> Result<()> {
    let frames = match input {
        Some(dir) => read_frames(dir)?,
        None => generate_sequence(&cfg.synth)?.frames,
    };
    let mut det = cfg.build_detector(cfg.detector)?;
    let run = run_detector(det.as_mut(), &frames, cfg.detect.threshold, &cfg.matching)?;
    let header = DetectionsHeader {
        detector: cfg.detector,
        config_hash: cfg.hash(),
        warmup_frames: run.warmup_frames,
        frames: frames.len(),
    };
    let path = out.join("detections.jsonl");
    atomic_write(&path, encode_detections(&header, &run.detections).as_bytes())?;
    write_config(cfg, out)?;
    let count: usize = run.detections.iter().map(Vec::len).sum();
    println!(
        "detect: {} on {} frames, {count} detections, warm-up {} -> {}",
        cfg.detector,
        frames.len(),
        run.warmup_frames,
        path.display()
    );
    Ok(())
}

fn eval(cfg: &PipelineConfig, detections: &Path, track_path: &Path, out: &Path) -> Result<()> {
    let (header, per_frame) = read_detections(detections)?;
    let track = read_track(track_path)?;
    if per_frame.len() != track.len() {
        bail!(
            "frame extents disagree: {} covers frames 0..{}, {} covers frames 0..{}",
            detections.display(),
            per_frame.len(),
            track_path.display(),
            track.len()
        );
    }
    let skip = header.warmup_frames.min(track.len());
    let report = evaluate(&per_frame[skip..], &track[skip..], &cfg.matching)?;
    let mut text = String::new();
    let _ = writeln!(text, "detector = {}", header.detector);
    let _ = writeln!(text, "detections_config_hash = {}", header.config_hash);
    let _ = writeln!(text, "config_hash = {}", cfg.hash());
    let _ = writeln!(text, "warmup_frames = {}", header.warmup_frames);
    text.push_str(&report.to_text());
    atomic_write(&out.join("report.txt"), text.as_bytes())?;
    atomic_write(&out.join("curve.csv"), report.to_csv().as_bytes())?;
    println!(
        "eval: auc {:.4} ap {:.4} f1 {:.4} over {} frames -> {}",
        report.auc,
        report.ap,
        report.f1,
        report.frames,
        out.display()
    );
    Ok(())
}

fn sweep(cfg: &PipelineConfig, threads: usize, only: Option<DetectorKind>, out: &Path) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(d) = only {
        cfg.sweep.detectors = vec![d];
    }
    let rows = run_sweep(&cfg, threads)?;
    let hash = cfg.hash();
    let mut csv = String::new();
    for (i, line) in sweep_csv(&rows).lines().enumerate() {
        let first = if i == 0 { "config_hash" } else { hash.as_str() };
        let _ = writeln!(csv, "{first},{line}");
    }
    let path = out.join("sweep.csv");
    atomic_write(&path, csv.as_bytes())?;
    write_config(&cfg, out)?;
    println!(
        "sweep: {} cells on {} threads -> {}",
        rows.len(),
        threads.max(1),
        path.display()
    );
    Ok(())
}

/// Circular path centred in the bench frame, one pixel per frame.
fn bench_synth(cfg: &PipelineConfig) -> SynthConfig {
    let b = &cfg.bench;
    let (w, h) = (b.width as f64, b.height as f64);
    let radius = 0.35 * w.min(h);
    SynthConfig {
        width: b.width,
        height: b.height,
        frames: b.frames + b.skip,
        target_path: TargetPath::Circular {
            center: [w / 2.0, h / 2.0],
            radius,
            angular_speed: 1.0 / radius,
            phase: 0.0,
        },
        ..cfg.synth
    }
}

fn bench(cfg: &PipelineConfig, only: Option<DetectorKind>, out: &Path) -> Result<()> {
    let frames = generate_sequence(&bench_synth(cfg))?.frames;
    let detectors = match only {
        Some(d) => vec![d],
        None => cfg.bench.detectors.clone(),
    };
    let mut text = String::new();
    let _ = writeln!(text, "config_hash = {}", cfg.hash());
    let _ = writeln!(
        text,
        "frames = {} timed after {} skipped, {}x{}, single thread",
        cfg.bench.frames, cfg.bench.skip, cfg.bench.width, cfg.bench.height
    );
    let (mut locate, mut directional) = (None, None);
    for kind in detectors {
        // Detectors run on the calling thread; nothing here spawns workers.
        let mut det = cfg.build_detector(kind)?;
        let ms = stmd_core::eval::timing_run(det.as_mut(), &frames, cfg.bench.skip)?;
        let _ = writeln!(text, "{kind}.time_per_frame_ms = {ms:.3}");
        for (stage, n) in det.frame_ops().iter() {
            let _ = writeln!(text, "{kind}.ops.{stage} = {n}");
        }
        match kind {
            DetectorKind::StmdNet => locate = Some(det.frame_ops().get(ops::LOCATE_CORRELATIONS)),
            DetectorKind::Dstmd => directional = Some(det.frame_ops().get(ops::DIRECTIONAL_CORRELATIONS)),
            _ => {}
        }
    }
    if let (Some(l), Some(d)) = (locate, directional) {
        if l > 0 {
            let _ = writeln!(
                text,
                "directional_correlation_ratio = {d}:{l} = {}",
                d as f64 / l as f64
            );
        }
    }
    atomic_write(&out.join("bench.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}
