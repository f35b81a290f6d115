//! Detection extraction, ground-truth matching and Recall–FPPI / AP / F1 /
//! angular-error metrics.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detector::Detector;
use crate::error::{Result, StmdError};
use crate::ops::OpCounts;
use crate::pixelgrid::Grid2D;
use crate::stmdnet::DirectionField;
use crate::synthgen::TrackPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: usize,
    /// `[x, y]` in pixels.
    pub position: [f64; 2],
    pub score: f64,
    /// Radians in `[0, 2π)`, image coordinates.
    pub direction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub match_radius: f64,
    pub nms_radius: f64,
    pub threshold_count: usize,
    /// Upper end of the FPPI integration range for the AUC.
    pub fppi_max: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            match_radius: 5.0,
            nms_radius: 5.0,
            threshold_count: 50,
            fppi_max: 5.0,
        }
    }
}

impl MatchingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_radius >= 1.0) {
            return Err(StmdError::param("match_radius", "must be at least 1 pixel"));
        }
        if !(self.nms_radius >= 1.0) {
            return Err(StmdError::param("nms_radius", "must be at least 1 pixel"));
        }
        if self.threshold_count == 0 {
            return Err(StmdError::param("threshold_count", "must be positive"));
        }
        if !(self.fppi_max > 0.0) {
            return Err(StmdError::param("fppi_max", "must be positive"));
        }
        Ok(())
    }
}

/// Local maxima of `response` at or above `threshold`, pruned by greedy
/// non-maximum suppression in descending score order (row-major order breaks
/// ties). Only positive responses count.
pub fn extract_detections(response: &Grid2D, threshold: f64, cfg: &MatchingConfig) -> Vec<Detection> {
    extract_with_directions(response, None, 0, threshold, cfg)
}

pub fn extract_with_directions(
    response: &Grid2D,
    directions: Option<&DirectionField>,
    frame_index: usize,
    threshold: f64,
    cfg: &MatchingConfig,
) -> Vec<Detection> {
    let (h, w) = response.shape();
    let mut candidates: Vec<(f32, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = response.get(r, c);
            if !(v > 0.0) || (v as f64) < threshold {
                continue;
            }
            let mut is_max = true;
            'nb: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if (dr, dc) != (0, 0) && response.get_or_zero(r as isize + dr, c as isize + dc) > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                candidates.push((v, r * w + c));
            }
        }
    }
    // Descending score, then row-major position.
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let rad = cfg.nms_radius;
    let reach = rad.floor() as isize;
    let mut suppressed = vec![false; h * w];
    let mut out = Vec::new();
    for (score, idx) in candidates {
        if suppressed[idx] {
            continue;
        }
        let (r, c) = ((idx / w) as isize, (idx % w) as isize);
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                if ((dr * dr + dc * dc) as f64) <= rad * rad {
                    suppressed[rr as usize * w + cc as usize] = true;
                }
            }
        }
        let direction = directions
            .and_then(|d| d.get(r as usize, c as usize))
            .map(|(a, _)| a as f64);
        out.push(Detection {
            frame_index,
            position: [c as f64, r as f64],
            score: score as f64,
            direction,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Index of the detection matched to `truth`: the closest one inside the
/// match radius (earliest wins ties).
pub fn matched_index<'a>(
    dets: impl IntoIterator<Item = &'a Detection>,
    truth: &TrackPoint,
    cfg: &MatchingConfig,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in dets.into_iter().enumerate() {
        let dist = distance(d.position, truth.center);
        if dist <= cfg.match_radius && best.is_none_or(|(_, b)| dist < b) {
            best = Some((i, dist));
        }
    }
    best.map(|(i, _)| i)
}

/// Single-target matching: the closest detection within the radius is a true
/// positive, every other detection a false positive, and a frame without a
/// match has one miss.
pub fn match_frame(dets: &[Detection], truth: &TrackPoint, cfg: &MatchingConfig) -> MatchCounts {
    match matched_index(dets, truth, cfg) {
        Some(_) => MatchCounts {
            tp: 1,
            fp: dets.len() - 1,
            fn_: 0,
        },
        None => MatchCounts {
            tp: 0,
            fp: dets.len(),
            fn_: 1,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCounts {
    pub threshold: f64,
    pub counts: MatchCounts,
    pub frames: usize,
}

impl ThresholdCounts {
    pub fn recall(&self) -> f64 {
        let pos = self.counts.tp + self.counts.fn_;
        if pos == 0 {
            0.0
        } else {
            self.counts.tp as f64 / pos as f64
        }
    }

    pub fn precision(&self) -> f64 {
        let det = self.counts.tp + self.counts.fp;
        if det == 0 {
            0.0
        } else {
            self.counts.tp as f64 / det as f64
        }
    }

    pub fn fppi(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.counts.fp as f64 / self.frames as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fppi: f64,
    pub recall: f64,
}

/// Recall–FPPI curve sorted by FPPI, and the area under it on
/// `[0, fppi_max]` divided by `fppi_max`. Recall is zero before the first
/// point and held flat after the last one.
pub fn recall_fppi_auc(sweep: &[ThresholdCounts], fppi_max: f64) -> Result<(Vec<CurvePoint>, f64)> {
    if sweep.is_empty() {
        return Err(StmdError::EmptySweep);
    }
    let mut curve: Vec<CurvePoint> = sweep
        .iter()
        .map(|t| CurvePoint {
            fppi: t.fppi(),
            recall: t.recall(),
        })
        .collect();
    curve.sort_by(|a, b| a.fppi.total_cmp(&b.fppi).then(a.recall.total_cmp(&b.recall)));

    let mut area = 0.0;
    for pair in curve.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.fppi >= fppi_max {
            break;
        }
        let x1 = b.fppi.min(fppi_max);
        let width = b.fppi - a.fppi;
        let r1 = if width > 0.0 {
            a.recall + (b.recall - a.recall) * (x1 - a.fppi) / width
        } else {
            b.recall
        };
        area += 0.5 * (a.recall + r1) * (x1 - a.fppi);
    }
    let last = curve[curve.len() - 1];
    if last.fppi < fppi_max {
        area += last.recall * (fppi_max - last.fppi);
    }
    Ok((curve, area / fppi_max))
}

/// Lowest FPPI at which the curve reaches `recall`.
pub fn fppi_at_recall(curve: &[CurvePoint], recall: f64) -> Option<f64> {
    curve
        .iter()
        .filter(|p| p.recall >= recall)
        .map(|p| p.fppi)
        .min_by(f64::total_cmp)
}

/// Step-sum average precision: detections ranked by descending score,
/// `Σ (R_i − R_{i−1}) · P_i`. Each entry is `(score, is_true_positive)`.
pub fn average_precision(scored: &[(f64, bool)], truths: usize) -> Result<f64> {
    if truths == 0 {
        return Err(StmdError::NoGroundTruth);
    }
    let mut order: Vec<&(f64, bool)> = scored.iter().collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut ap, mut prev_recall) = (0usize, 0.0, 0.0);
    for (i, (_, hit)) in order.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        let recall = tp as f64 / truths as f64;
        let precision = tp as f64 / (i + 1) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Best F1 over the sweep; 0 for a detector that never fires.
pub fn f1_best(sweep: &[ThresholdCounts]) -> f64 {
    sweep.iter().map(ThresholdCounts::f1).fold(0.0, f64::max)
}

/// Absolute angular difference wrapped into `[0, π]`.
pub fn wrapped_angle_error(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularError {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

/// Mean and median wrapped error over `(estimate, truth)` pairs.
pub fn angular_error(pairs: &[(f64, f64)]) -> Result<AngularError> {
    if pairs.is_empty() {
        return Err(StmdError::NoDirectedMatches);
    }
    let mut errs: Vec<f64> = pairs.iter().map(|&(a, h)| wrapped_angle_error(a, h)).collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    errs.sort_by(f64::total_cmp);
    let n = errs.len();
    let median = if n % 2 == 1 {
        errs[n / 2]
    } else {
        0.5 * (errs[n / 2 - 1] + errs[n / 2])
    };
    Ok(AngularError { mean, median, count: n })
}

/// Linear-interpolation quantiles at `count` evenly spaced probabilities in
/// `[0, 1]`.
pub fn quantile_thresholds(values: &[f64], count: usize) -> Vec<f64> {
    if values.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (0..count)
        .map(|i| {
            let p = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            let pos = p * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub ap: f64,
    pub f1: f64,
    pub best_threshold: f64,
    pub mean_angular_error: Option<f64>,
    pub median_angular_error: Option<f64>,
    pub time_per_frame_ms: Option<f64>,
    pub op_counts: OpCounts,
    pub fppi_max: f64,
    pub frames: usize,
    pub sweep: Vec<ThresholdCounts>,
    pub curve: Vec<CurvePoint>,
}

impl MetricsReport {
    pub fn fppi_at_recall(&self, recall: f64) -> Option<f64> {
        fppi_at_recall(&self.curve, recall)
    }

    /// `key = value` lines followed by the curve table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(s, "frames = {}", self.frames);
        let _ = writeln!(s, "fppi_max = {}", self.fppi_max);
        let _ = writeln!(s, "auc = {:.6}", self.auc);
        let _ = writeln!(s, "ap = {:.6}", self.ap);
        let _ = writeln!(s, "f1 = {:.6}", self.f1);
        let _ = writeln!(s, "best_threshold = {:.6e}", self.best_threshold);
        let _ = writeln!(s, "mean_angular_error_rad = {}", opt(self.mean_angular_error));
        let _ = writeln!(s, "median_angular_error_rad = {}", opt(self.median_angular_error));
        let _ = writeln!(s, "time_per_frame_ms = {}", opt(self.time_per_frame_ms));
        for (k, v) in self.op_counts.iter() {
            let _ = writeln!(s, "ops.{k} = {v}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "# fppi recall");
        for p in &self.curve {
            let _ = writeln!(s, "{:.6} {:.6}", p.fppi, p.recall);
        }
        s
    }

    /// One row per threshold point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fppi,recall,precision,f1,tp,fp,fn\n");
        for t in &self.sweep {
            let _ = writeln!(
                s,
                "{:e},{},{},{},{},{},{},{}",
                t.threshold,
                t.fppi(),
                t.recall(),
                t.precision(),
                t.f1(),
                t.counts.tp,
                t.counts.fp,
                t.counts.fn_
            );
        }
        s
    }
}

/// Full evaluation of per-frame candidate detections against one truth
/// point per frame. Thresholds are quantiles of the per-frame peak scores,
/// so uniformly rescaling scores leaves every metric unchanged.
pub fn evaluate(detections: &[Vec<Detection>], truth: &[TrackPoint], cfg: &MatchingConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if detections.len() != truth.len() {
        return Err(StmdError::FrameCountMismatch {
            detections: format!("{} frames", detections.len()),
            track: format!("{} frames", truth.len()),
        });
    }
    if truth.is_empty() {
        return Err(StmdError::NoGroundTruth);
    }
    let peaks: Vec<f64> = detections
        .iter()
        .map(|d| d.iter().map(|x| x.score).fold(0.0, f64::max))
        .collect();
    let mut thresholds = quantile_thresholds(&peaks, cfg.threshold_count);
    thresholds.iter_mut().for_each(|t| {
        if *t <= 0.0 {
            *t = f64::MIN_POSITIVE;
        }
    });

    let sweep: Vec<ThresholdCounts> = thresholds
        .iter()
        .map(|&thr| {
            let mut counts = MatchCounts::default();
            for (dets, t) in detections.iter().zip(truth) {
                let kept: Vec<Detection> = dets.iter().filter(|d| d.score >= thr).copied().collect();
                counts += match_frame(&kept, t, cfg);
            }
            ThresholdCounts {
                threshold: thr,
                counts,
                frames: truth.len(),
            }
        })
        .collect();

    let (curve, auc) = recall_fppi_auc(&sweep, cfg.fppi_max)?;

    let mut scored = Vec::new();
    for (dets, t) in detections.iter().zip(truth) {
        let hit = matched_index(dets, t, cfg);
        scored.extend(dets.iter().enumerate().map(|(i, d)| (d.score, Some(i) == hit)));
    }
    let ap = average_precision(&scored, truth.len())?;

    let best = sweep
        .iter()
        .copied()
        .reduce(|a, b| if b.f1() > a.f1() { b } else { a })
        .expect("sweep is non-empty");
    let f1 = best.f1();

    let mut pairs = Vec::new();
    for (dets, t) in detections.iter().zip(truth) {
        let kept: Vec<&Detection> = dets.iter().filter(|d| d.score >= best.threshold).collect();
        if let Some(i) = matched_index(kept.iter().copied(), t, cfg) {
            if let Some(a) = kept[i].direction {
                pairs.push((a, t.heading));
            }
        }
    }
    let ang = angular_error(&pairs).ok();

    Ok(MetricsReport {
        auc,
        ap,
        f1,
        best_threshold: best.threshold,
        mean_angular_error: ang.map(|a| a.mean),
        median_angular_error: ang.map(|a| a.median),
        time_per_frame_ms: None,
        op_counts: OpCounts::new(),
        fppi_max: cfg.fppi_max,
        frames: truth.len(),
        sweep,
        curve,
    })
}

/// Mean wall-clock milliseconds per frame on the calling thread, skipping the
/// first `skip` frames.
pub fn timing_run(detector: &mut dyn Detector, frames: &[Grid2D], skip: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for (i, f) in frames.iter().enumerate() {
        let start = Instant::now();
        let out = detector.step(f)?;
        let elapsed = start.elapsed().as_secs_f64();
        std::hint::black_box(&out);
        if i >= skip {
            total += elapsed;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(StmdError::param(
            "frames",
            format!("need more than {skip} frames to time"),
        ));
    }
    Ok(total * 1e3 / counted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, y: f64, score: f64) -> Detection {
        Detection {
            frame_index: 0,
            position: [x, y],
            score,
            direction: None,
        }
    }

    fn truth(x: f64, y: f64) -> TrackPoint {
        TrackPoint {
            frame_index: 0,
            center: [x, y],
            velocity: [1.0, 0.0],
            heading: 0.0,
        }
    }

    #[test]
    fn extraction_examples() {
        let cfg = MatchingConfig::default();
        assert!(extract_detections(&Grid2D::zeros(8, 8), 0.0, &cfg).is_empty());

        let mut g = Grid2D::zeros(10, 10);
        g.set(4, 6, 1.0);
        let d = extract_detections(&g, 0.5, &cfg);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].position, [6.0, 4.0]);

        let mut g = Grid2D::zeros(10, 10);
        g.set(5, 2, 0.8);
        g.set(5, 5, 0.9);
        let d = extract_detections(&g, 0.1, &cfg);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].position, [5.0, 5.0]);

        g.set(5, 5, 0.8);
        let d = extract_detections(&g, 0.1, &cfg);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].position, [2.0, 5.0]);
    }

    #[test]
    fn matching_examples() {
        let cfg = MatchingConfig::default();
        let t = truth(10.0, 10.0);
        assert_eq!(
            match_frame(&[det(10.0, 10.0, 1.0)], &t, &cfg),
            MatchCounts { tp: 1, fp: 0, fn_: 0 }
        );
        assert_eq!(match_frame(&[], &t, &cfg), MatchCounts { tp: 0, fp: 0, fn_: 1 });
        assert_eq!(
            match_frame(&[det(12.0, 10.0, 1.0), det(9.0, 10.0, 0.5)], &t, &cfg),
            MatchCounts { tp: 1, fp: 1, fn_: 0 }
        );
    }

    fn counts(tp: usize, fp: usize, fn_: usize, frames: usize) -> ThresholdCounts {
        ThresholdCounts {
            threshold: 0.0,
            counts: MatchCounts { tp, fp, fn_ },
            frames,
        }
    }

    #[test]
    fn auc_extremes() {
        let perfect = vec![counts(10, 0, 0, 10); 3];
        assert_eq!(recall_fppi_auc(&perfect, 5.0).unwrap().1, 1.0);
        let silent = vec![counts(0, 0, 10, 10); 3];
        assert_eq!(recall_fppi_auc(&silent, 5.0).unwrap().1, 0.0);
        assert!(matches!(recall_fppi_auc(&[], 5.0), Err(StmdError::EmptySweep)));
    }

    #[test]
    fn ap_extremes() {
        assert_eq!(average_precision(&[(0.9, true), (0.5, true)], 2).unwrap(), 1.0);
        assert_eq!(average_precision(&[(0.9, false), (0.5, false)], 2).unwrap(), 0.0);
        assert!(average_precision(&[], 0).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_best(&[counts(4, 0, 0, 4)]), 1.0);
        assert_eq!(f1_best(&[counts(0, 0, 4, 4)]), 0.0);
        assert!((f1_best(&[counts(2, 2, 2, 4)]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn angular_examples() {
        assert_eq!(angular_error(&[(1.0, 1.0), (2.0, 2.0)]).unwrap().mean, 0.0);
        assert!((angular_error(&[(PI, 0.0)]).unwrap().mean - PI).abs() < 1e-15);
        let e = angular_error(&[(10f64.to_radians(), 0.0), (350f64.to_radians(), 0.0)]).unwrap();
        assert!((e.mean - 10f64.to_radians()).abs() < 1e-12);
        assert!(angular_error(&[]).is_err());
    }
}
