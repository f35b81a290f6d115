//! Running detectors over sequences, scoring them, and factorial sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::detector::{Detector, DetectorKind};
use crate::error::{Result, StmdError};
use crate::eval::{evaluate, extract_with_directions, Detection, MatchingConfig, MetricsReport};
use crate::ops::OpCounts;
use crate::pixelgrid::Grid2D;
use crate::synthgen::{downsample_rate, generate_sequence, Sequence, TrackPoint};

/// Frames skipped before per-frame timing starts.
pub const TIMING_SKIP: usize = 10;

/// Per-frame detections of one detector pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRun {
    pub detector: DetectorKind,
    pub warmup_frames: usize,
    pub detections: Vec<Vec<Detection>>,
    /// Counts of the last frame.
    pub frame_ops: OpCounts,
    /// Mean wall-clock per frame after the first [`TIMING_SKIP`] frames.
    pub time_per_frame_ms: Option<f64>,
}

pub fn run_detector(
    detector: &mut dyn Detector,
    frames: &[Grid2D],
    threshold: f64,
    matching: &MatchingConfig,
) -> Result<SequenceRun> {
    let mut detections = Vec::with_capacity(frames.len());
    let (mut elapsed, mut timed) = (0.0, 0usize);
    for (i, frame) in frames.iter().enumerate() {
        let start = Instant::now();
        let out = detector.step(frame)?;
        if i >= TIMING_SKIP {
            elapsed += start.elapsed().as_secs_f64();
            timed += 1;
        }
        detections.push(extract_with_directions(
            &out.response,
            out.directions.as_ref(),
            i,
            threshold,
            matching,
        ));
    }
    Ok(SequenceRun {
        detector: detector.kind(),
        warmup_frames: detector.warmup_frames(),
        detections,
        frame_ops: detector.frame_ops().clone(),
        time_per_frame_ms: (timed > 0).then(|| elapsed * 1e3 / timed as f64),
    })
}

/// Scores a run against its track, skipping warm-up frames.
pub fn evaluate_run(run: &SequenceRun, track: &[TrackPoint], matching: &MatchingConfig) -> Result<MetricsReport> {
    if run.detections.len() != track.len() {
        return Err(StmdError::FrameCountMismatch {
            detections: format!("frames 0..{}", run.detections.len()),
            track: format!("frames 0..{}", track.len()),
        });
    }
    let skip = run.warmup_frames.min(track.len());
    let mut report = evaluate(&run.detections[skip..], &track[skip..], matching)?;
    report.op_counts = run.frame_ops.clone();
    report.time_per_frame_ms = run.time_per_frame_ms;
    Ok(report)
}

/// Builds the configured detector, runs it and scores it.
pub fn run_and_evaluate(cfg: &PipelineConfig, kind: DetectorKind, seq: &Sequence) -> Result<MetricsReport> {
    let mut det = cfg.build_detector(kind)?;
    let run = run_detector(det.as_mut(), &seq.frames, cfg.detect.threshold, &cfg.matching)?;
    evaluate_run(&run, &seq.track, &cfg.matching)
}

/// One point of a factorial sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub detector: DetectorKind,
    /// `(axis, value)` in fixed axis order.
    pub params: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub auc: f64,
    pub ap: f64,
    pub f1: f64,
    pub mean_angular_error: Option<f64>,
    pub time_per_frame_ms: Option<f64>,
    pub frame_ops: OpCounts,
}

/// Full factorial grid of the sweep axes. Axes vary slowest first, in the
/// order velocity, target_size, contrast, rate_factor, tau, decay_g,
/// inhib_gain, frac_order; detectors vary fastest.
pub fn plan_sweep(cfg: &PipelineConfig) -> Result<Vec<SweepCell>> {
    let s = &cfg.sweep;
    let axes: Vec<(&str, Vec<f64>)> = [
        ("velocity", s.velocity.clone()),
        ("target_size", s.target_size.clone()),
        ("contrast", s.contrast.clone()),
        ("rate_factor", s.rate_factor.iter().map(|&f| f as f64).collect()),
        ("tau", s.tau.iter().map(|&t| t as f64).collect()),
        ("decay_g", s.decay_g.clone()),
        ("inhib_gain", s.inhib_gain.clone()),
        ("frac_order", s.frac_order.clone()),
    ]
    .into_iter()
    .filter(|(_, v)| !v.is_empty())
    .collect();

    let cells = axes
        .iter()
        .map(|(_, v)| v.len())
        .try_fold(s.detectors.len(), usize::checked_mul)
        .unwrap_or(usize::MAX);
    if cells > s.cell_budget {
        return Err(StmdError::CellBudget {
            cells,
            budget: s.cell_budget,
        });
    }
    if s.detectors.is_empty() {
        return Err(StmdError::Config {
            key: "sweep.detectors".into(),
            reason: "must name at least one detector".into(),
        });
    }

    let mut combos: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for (name, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push((name.to_string(), v));
                    p
                })
            })
            .collect();
    }
    Ok(combos
        .into_iter()
        .flat_map(|params| {
            s.detectors.iter().map(move |&detector| SweepCell {
                detector,
                params: params.clone(),
            })
        })
        .collect())
}

/// The base config with a cell's parameters applied, plus its rate factor.
pub fn cell_config(base: &PipelineConfig, cell: &SweepCell) -> Result<(PipelineConfig, usize)> {
    let mut cfg = base.clone();
    let mut factor = 1;
    for (name, v) in &cell.params {
        let v = *v;
        match name.as_str() {
            "velocity" => cfg.synth.target_path = cfg.synth.target_path.with_speed(v),
            "target_size" => cfg.synth.target_size = [v, v],
            "contrast" => cfg.synth.target_luminance = cfg.synth.bg_mean_luminance - v,
            "rate_factor" => factor = v as usize,
            "tau" => {
                let t = v as usize;
                cfg.estmd.tau = t;
                cfg.dstmd.delay_tau = t;
                cfg.dstmd.tau3 = t;
            }
            "decay_g" => cfg.stmdnet.medulla.decay_g = v,
            "inhib_gain" => cfg.stmdnet.medulla.inhib_gain = v,
            "frac_order" => cfg.stmdnet.lamina.frac_order = v,
            other => {
                return Err(StmdError::Config {
                    key: format!("sweep.{other}"),
                    reason: "not a sweep axis".into(),
                })
            }
        }
    }
    cfg.validate()?;
    Ok((cfg, factor))
}

pub fn run_cell(base: &PipelineConfig, cell: &SweepCell) -> Result<SweepRow> {
    let (cfg, factor) = cell_config(base, cell)?;
    let seq = generate_sequence(&cfg.synth)?;
    let seq = if factor > 1 {
        downsample_rate(&seq, factor)?
    } else {
        seq
    };
    let report = run_and_evaluate(&cfg, cell.detector, &seq)?;
    Ok(SweepRow {
        cell: cell.clone(),
        auc: report.auc,
        ap: report.ap,
        f1: report.f1,
        mean_angular_error: report.mean_angular_error,
        time_per_frame_ms: report.time_per_frame_ms,
        frame_ops: report.op_counts,
    })
}

/// Runs every cell on a pool of `threads` workers; rows come back in plan
/// order regardless of scheduling.
pub fn run_sweep(base: &PipelineConfig, threads: usize) -> Result<Vec<SweepRow>> {
    let cells = plan_sweep(base)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| StmdError::param("threads", e.to_string()))?;
    pool.install(|| cells.par_iter().map(|c| run_cell(base, c)).collect())
}

/// Long-format CSV: one row per cell with its parameters, metrics and
/// per-frame op counts.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let axes: Vec<String> = rows
        .first()
        .map(|r| r.cell.params.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut stages: Vec<String> = rows
        .iter()
        .flat_map(|r| r.frame_ops.iter().map(|(k, _)| k.to_string()))
        .collect();
    stages.sort();
    stages.dedup();

    let mut s = String::from("detector");
    for a in &axes {
        let _ = write!(s, ",{a}");
    }
    s.push_str(",auc,ap,f1,mean_angular_error_deg,time_per_frame_ms");
    for st in &stages {
        let _ = write!(s, ",ops_{st}");
    }
    s.push('\n');
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        s.push_str(r.cell.detector.name());
        for (_, v) in &r.cell.params {
            let _ = write!(s, ",{v}");
        }
        let _ = write!(
            s,
            ",{},{},{},{},{}",
            r.auc,
            r.ap,
            r.f1,
            opt(r.mean_angular_error.map(f64::to_degrees)),
            opt(r.time_per_frame_ms)
        );
        for st in &stages {
            let _ = write!(s, ",{}", r.frame_ops.get(st));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sweep_is_velocity_by_detector() {
        let cells = plan_sweep(&PipelineConfig::default()).unwrap();
        assert_eq!(cells.len(), 10);
        assert_eq!(cells[0].detector, DetectorKind::Estmd);
        assert_eq!(cells[1].detector, DetectorKind::StmdNet);
        assert_eq!(cells[1].params, vec![("velocity".to_string(), 0.5)]);
        assert_eq!(cells[9].params, vec![("velocity".to_string(), 4.0)]);
    }

    #[test]
    fn budget_is_enforced() {
        let mut cfg = PipelineConfig::default();
        cfg.sweep.tau = (1..=12).collect();
        cfg.sweep.cell_budget = 100;
        match plan_sweep(&cfg) {
            Err(StmdError::CellBudget { cells, budget }) => assert_eq!((cells, budget), (120, 100)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cell_parameters_reach_the_config() {
        let base = PipelineConfig::default();
        let cell = SweepCell {
            detector: DetectorKind::Estmd,
            params: vec![
                ("velocity".into(), 2.0),
                ("rate_factor".into(), 5.0),
                ("tau".into(), 6.0),
                ("decay_g".into(), 0.25),
            ],
        };
        let (cfg, factor) = cell_config(&base, &cell).unwrap();
        assert_eq!(factor, 5);
        let v = cfg.synth.target_path.velocity_at(0.0);
        assert!((v[0].hypot(v[1]) - 2.0).abs() < 1e-12);
        assert_eq!((cfg.estmd.tau, cfg.dstmd.delay_tau, cfg.dstmd.tau3), (6, 6, 6));
        assert_eq!(cfg.stmdnet.medulla.decay_g, 0.25);
    }
}
