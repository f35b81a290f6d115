//! Dual-dynamics locating and shared directional coding.
//!
//! The medulla keeps one leaky membrane potential per polarity. Each is
//! driven by its own rectified channel (ipsilateral excitation) and leaks
//! faster when the spatially pooled opposite channel is active
//! (contralateral inhibition acting on the leak conductance). Their product
//! locates small targets; their guarded ratio is a per-pixel code (LDFC)
//! whose neighbourhood vector sum gives the motion direction.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorKind, DetectorOutput};
use crate::error::{Result, StmdError};
use crate::frontend::{FrontEnd, LaminaConfig, RetinaConfig};
use crate::ops::{self, OpCounts};
use crate::pixelgrid::{convolve_separable, gaussian_kernel_auto, FrameRing, Grid2D, Kernel1D, OnOffSignals};

/// Per-pixel direction in radians within `[0, 2π)`, measured in image
/// coordinates (x right, y down), with a non-negative strength.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionField {
    height: usize,
    width: usize,
    angle: Vec<f32>,
    magnitude: Vec<f32>,
}

impl DirectionField {
    pub fn undefined(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            angle: vec![0.0; height * width],
            magnitude: vec![0.0; height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// `(angle, magnitude)` where a direction is defined.
    pub fn get(&self, row: usize, col: usize) -> Option<(f32, f32)> {
        let i = row * self.width + col;
        (self.magnitude[i] > 0.0).then(|| (self.angle[i], self.magnitude[i]))
    }

    pub fn is_defined(&self, row: usize, col: usize) -> bool {
        self.magnitude[row * self.width + col] > 0.0
    }

    pub fn defined_count(&self) -> usize {
        self.magnitude.iter().filter(|&&m| m > 0.0).count()
    }

    pub fn angles(&self) -> &[f32] {
        &self.angle
    }

    pub fn magnitudes(&self) -> &[f32] {
        &self.magnitude
    }

    /// Every defined direction turned by π.
    pub fn reversed(mut self) -> Self {
        for (a, &m) in self.angle.iter_mut().zip(&self.magnitude) {
            if m > 0.0 {
                *a = wrap_angle(*a as f64 + std::f64::consts::PI) as f32;
            }
        }
        self
    }

    /// Sets a direction; a zero magnitude leaves the pixel undefined.
    pub(crate) fn set_index(&mut self, i: usize, angle: f32, magnitude: f32) {
        if magnitude > 0.0 && magnitude.is_finite() {
            self.angle[i] = wrap_angle(angle as f64) as f32;
            self.magnitude[i] = magnitude;
        } else {
            self.angle[i] = 0.0;
            self.magnitude[i] = 0.0;
        }
    }
}

/// Maps any angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Membrane potentials of the ON and OFF channels, both non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct DualDynamics {
    pub v_on: Grid2D,
    pub v_off: Grid2D,
}

impl DualDynamics {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            v_on: Grid2D::zeros(height, width),
            v_off: Grid2D::zeros(height, width),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.v_on.shape()
    }

    pub fn swapped(&self) -> Self {
        Self {
            v_on: self.v_off.clone(),
            v_off: self.v_on.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MedullaConfig {
    /// Leak conductance `g_L`, per frame.
    pub decay_g: f64,
    /// Gain `k` of the pooled opposite channel on the leak.
    pub inhib_gain: f64,
    /// Gaussian pooling scale of the opposite channel, pixels; 0 disables pooling.
    pub inhib_sigma: f64,
    /// Euler step `Δt`, frames.
    pub step_dt: f64,
    /// Gain `e_g` of the same-polarity drive.
    pub excit_gain: f64,
    /// Potentials above this abort the run.
    pub ceiling: f64,
}

impl Default for MedullaConfig {
    fn default() -> Self {
        Self {
            decay_g: 0.5,
            inhib_gain: 2.0,
            inhib_sigma: 3.0,
            step_dt: 1.0,
            excit_gain: 1.0,
            ceiling: 1e6,
        }
    }
}

impl MedullaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_g > 0.0) {
            return Err(StmdError::param("decay_g", "must be positive"));
        }
        if !(self.step_dt > 0.0) {
            return Err(StmdError::param("step_dt", "must be positive"));
        }
        if self.decay_g * self.step_dt >= 1.0 {
            return Err(StmdError::param(
                "decay_g",
                format!(
                    "decay_g·step_dt = {} must stay below 1 for a stable explicit step",
                    self.decay_g * self.step_dt
                ),
            ));
        }
        if !(self.inhib_gain >= 0.0) {
            return Err(StmdError::param("inhib_gain", "must be non-negative"));
        }
        if !(self.inhib_sigma >= 0.0) {
            return Err(StmdError::param("inhib_sigma", "must be non-negative"));
        }
        if !(self.excit_gain > 0.0) {
            return Err(StmdError::param("excit_gain", "must be positive"));
        }
        if !(self.ceiling > 0.0) {
            return Err(StmdError::param("ceiling", "must be positive"));
        }
        Ok(())
    }
}

/// Medulla with its pooling kernel prepared.
#[derive(Debug, Clone)]
pub struct Medulla {
    cfg: MedullaConfig,
    pool: Kernel1D,
}

impl Medulla {
    pub fn new(cfg: MedullaConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            pool: gaussian_kernel_auto(cfg.inhib_sigma)?,
            cfg,
        })
    }

    pub fn config(&self) -> &MedullaConfig {
        &self.cfg
    }

    /// Advances both potentials in place by one explicit Euler step:
    /// `v ← max(0, v + Δt·(−(g_L + k·Ŝ_opp)·v + e_g·S_same))`.
    pub fn step(&self, signals: &OnOffSignals, state: &mut DualDynamics) -> Result<()> {
        let (h, w) = signals.shape();
        if state.shape() != (h, w) {
            return Err(StmdError::Shape {
                expected: (h, w),
                actual: state.shape(),
            });
        }
        let pooled_off = self.pool(&signals.off)?;
        let pooled_on = self.pool(&signals.on)?;
        let c = &self.cfg;
        let (dt, g, k, e) = (
            c.step_dt as f32,
            c.decay_g as f32,
            c.inhib_gain as f32,
            c.excit_gain as f32,
        );
        let update = |v: &mut [f32], drive: &[f32], opp: &[f32]| -> f32 {
            let mut peak = 0.0f32;
            for ((v, &s), &q) in v.iter_mut().zip(drive).zip(opp) {
                let next = *v + dt * (e * s - (g + k * q) * *v);
                *v = next.max(0.0);
                peak = peak.max(*v);
            }
            peak
        };
        let p_on = update(state.v_on.as_mut_slice(), signals.on.as_slice(), pooled_off.as_slice());
        let p_off = update(state.v_off.as_mut_slice(), signals.off.as_slice(), pooled_on.as_slice());
        let peak = p_on.max(p_off);
        if !(peak as f64 <= c.ceiling) {
            return Err(StmdError::Runaway {
                value: peak as f64,
                ceiling: c.ceiling,
                decay_g: c.decay_g,
                inhib_gain: c.inhib_gain,
                excit_gain: c.excit_gain,
                step_dt: c.step_dt,
            });
        }
        Ok(())
    }

    fn pool(&self, grid: &Grid2D) -> Result<Grid2D> {
        if self.pool.radius() == 0 {
            return Ok(grid.clone());
        }
        convolve_separable(grid, &self.pool, &self.pool)
    }
}

pub fn medulla_step(signals: &OnOffSignals, state: &DualDynamics, cfg: &MedullaConfig) -> Result<DualDynamics> {
    let mut next = state.clone();
    Medulla::new(*cfg)?.step(signals, &mut next)?;
    Ok(next)
}

/// `v_on · v_off`, one multiply per pixel.
pub fn lobula_locate(dd: &DualDynamics) -> Grid2D {
    dd.v_on
        .zip_map(&dd.v_off, |a, b| a * b)
        .expect("dual dynamics grids share a shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdfcConfig {
    pub guard_eps: f64,
    pub noise_floor: f64,
    pub decode_radius: usize,
}

impl Default for LdfcConfig {
    fn default() -> Self {
        Self {
            guard_eps: 1e-3,
            noise_floor: 1e-3,
            decode_radius: 1,
        }
    }
}

impl LdfcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.guard_eps > 0.0) {
            return Err(StmdError::param("guard_eps", "must be positive"));
        }
        if !(self.noise_floor >= 0.0) {
            return Err(StmdError::param("noise_floor", "must be non-negative"));
        }
        if self.decode_radius < 1 {
            return Err(StmdError::param("decode_radius", "must be at least 1"));
        }
        Ok(())
    }
}

/// `1[v_on + v_off > floor] · v_on / (v_off + ε)`. The division is evaluated
/// at every pixel and gated afterwards.
pub fn ldfc_encode(dd: &DualDynamics, cfg: &LdfcConfig) -> Grid2D {
    let eps = cfg.guard_eps as f32;
    let floor = cfg.noise_floor as f32;
    dd.v_on
        .zip_map(&dd.v_off, |on, off| {
            let ratio = on / (off + eps);
            if on + off > floor {
                ratio
            } else {
                0.0
            }
        })
        .expect("dual dynamics grids share a shape")
}

/// Neighbourhood offsets `d ≠ 0` with `|d| ≤ r` and their unit vectors.
fn decode_taps(radius: usize) -> Vec<(isize, isize, f64, f64)> {
    let r = radius as isize;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx, dy) == (0, 0) {
                continue;
            }
            let norm = ((dx * dx + dy * dy) as f64).sqrt();
            if norm <= radius as f64 + 1e-9 || radius == 1 {
                taps.push((dx, dy, dx as f64 / norm, dy as f64 / norm));
            }
        }
    }
    taps
}

/// Vector sum of neighbouring LDFC values weighted by unit direction
/// vectors, normalized by the neighbourhood LDFC total. Only pixels with a
/// positive locate response receive a direction.
pub fn direction_decode(ldfc: &Grid2D, locate: &Grid2D, cfg: &LdfcConfig) -> Result<DirectionField> {
    ldfc.check_shape(locate)?;
    let (h, w) = ldfc.shape();
    let taps = decode_taps(cfg.decode_radius);
    let mut field = DirectionField::undefined(h, w);
    for row in 0..h {
        for col in 0..w {
            if locate.get(row, col) <= 0.0 {
                continue;
            }
            let (mut vx, mut vy, mut total) = (0.0f64, 0.0f64, 0.0f64);
            for &(dx, dy, ux, uy) in &taps {
                let v = ldfc.get_or_zero(row as isize + dy, col as isize + dx) as f64;
                vx += v * ux;
                vy += v * uy;
                total += v;
            }
            if total > cfg.guard_eps {
                vx /= total;
                vy /= total;
            }
            let mag = vx.hypot(vy);
            if mag > 0.0 {
                field.set_index(row * w + col, vy.atan2(vx) as f32, mag as f32);
            }
        }
    }
    Ok(field)
}

/// What the feedback history stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    /// Previous final outputs (a recurrent loop).
    Output,
    /// Previous raw locate responses.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackConfig {
    pub fb_gain: f64,
    pub fb_delay: usize,
    pub fb_sigma: f64,
    pub fb_source: FeedbackSource,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            fb_gain: 1.0,
            fb_delay: 1,
            fb_sigma: 5.0,
            fb_source: FeedbackSource::Output,
        }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fb_gain) {
            return Err(StmdError::param("fb_gain", "must lie in [0, 1]"));
        }
        if self.fb_delay < 1 {
            return Err(StmdError::param("fb_delay", "must be at least 1"));
        }
        if !(self.fb_sigma >= 0.0) {
            return Err(StmdError::param("fb_sigma", "must be non-negative"));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<Kernel1D> {
        gaussian_kernel_auto(self.fb_sigma)
    }
}

/// `max(0, raw − β · blur(history at fb_delay))`; the feedback term is zero
/// until the history is deep enough.
pub fn feedback_apply(raw_locate: &Grid2D, fb_history: &FrameRing, cfg: &FeedbackConfig) -> Result<Grid2D> {
    feedback_with_kernel(raw_locate, fb_history, cfg, &cfg.kernel()?)
}

fn feedback_with_kernel(
    raw: &Grid2D,
    fb_history: &FrameRing,
    cfg: &FeedbackConfig,
    kernel: &Kernel1D,
) -> Result<Grid2D> {
    if cfg.fb_gain == 0.0 {
        return Ok(raw.clone());
    }
    let Ok(past) = fb_history.delayed(cfg.fb_delay - 1) else {
        return Ok(raw.clone());
    };
    let blurred = if kernel.radius() == 0 {
        past.clone()
    } else {
        convolve_separable(past, kernel, kernel)?
    };
    let beta = cfg.fb_gain as f32;
    raw.zip_map(&blurred, |r, b| (r - beta * b).max(0.0))
}

/// Contrast polarity of the targets the pipeline reports directions for.
///
/// A dark target turns its leading edge into OFF activity and its trailing
/// edge into ON activity, so the LDFC mass sits behind it and the decoded
/// vector points against the motion; a bright target is the mirror case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolarity {
    Dark,
    Bright,
}

/// Tunable parameters of the dual-dynamics pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StmdNetConfig {
    pub retina: RetinaConfig,
    pub lamina: LaminaConfig,
    pub medulla: MedullaConfig,
    pub ldfc: LdfcConfig,
    pub target_polarity: TargetPolarity,
}

impl Default for StmdNetConfig {
    fn default() -> Self {
        Self {
            retina: RetinaConfig::default(),
            lamina: LaminaConfig::default(),
            medulla: MedullaConfig::default(),
            ldfc: LdfcConfig::default(),
            target_polarity: TargetPolarity::Dark,
        }
    }
}

/// Output of one pipeline step.
#[derive(Debug, Clone, PartialEq)]
pub struct StmdNetFrame {
    pub locate: Grid2D,
    pub directions: DirectionField,
}

/// Retina → lamina → ON/OFF → medulla → {locate, LDFC → direction}, with an
/// optional feedback stage on the locating branch.
#[derive(Debug, Clone)]
pub struct StmdNet {
    cfg: StmdNetConfig,
    feedback: Option<(FeedbackConfig, Kernel1D)>,
    front: FrontEnd,
    medulla: Medulla,
    state: Option<DualDynamics>,
    fb_history: FrameRing,
    fb_index: u64,
    ops: OpCounts,
}

impl StmdNet {
    pub fn new(cfg: StmdNetConfig) -> Result<Self> {
        cfg.ldfc.validate()?;
        Ok(Self {
            front: FrontEnd::new(&cfg.retina, &cfg.lamina)?,
            medulla: Medulla::new(cfg.medulla)?,
            cfg,
            feedback: None,
            state: None,
            fb_history: FrameRing::new(1),
            fb_index: 0,
            ops: OpCounts::new(),
        })
    }

    /// The feedback-augmented variant.
    pub fn with_feedback(cfg: StmdNetConfig, fb: FeedbackConfig) -> Result<Self> {
        fb.validate()?;
        let mut net = Self::new(cfg)?;
        net.fb_history = FrameRing::new(fb.fb_delay);
        net.feedback = Some((fb, fb.kernel()?));
        Ok(net)
    }

    pub fn config(&self) -> &StmdNetConfig {
        &self.cfg
    }

    pub fn dual_dynamics(&self) -> Option<&DualDynamics> {
        self.state.as_ref()
    }

    /// One frame through the pipeline; all-zero output during warm-up.
    pub fn process(&mut self, frame: &Grid2D) -> Result<StmdNetFrame> {
        self.ops.clear();
        let (h, w) = frame.shape();
        let Some(signals) = self.front.step(frame)? else {
            return Ok(StmdNetFrame {
                locate: Grid2D::zeros(h, w),
                directions: DirectionField::undefined(h, w),
            });
        };
        let state = self.state.get_or_insert_with(|| DualDynamics::zeros(h, w));
        self.medulla.step(&signals, state)?;
        let n = (h * w) as u64;
        self.ops.add(ops::MEDULLA_UPDATES, 2 * n);

        let raw = lobula_locate(state);
        self.ops.add(ops::LOCATE_CORRELATIONS, n);
        let ldfc = ldfc_encode(state, &self.cfg.ldfc);
        self.ops.add(ops::LDFC_DIVISIONS, n);
        let mut directions = direction_decode(&ldfc, &raw, &self.cfg.ldfc)?;
        if self.cfg.target_polarity == TargetPolarity::Dark {
            directions = directions.reversed();
        }

        let locate = match &self.feedback {
            None => raw,
            Some((fb, kernel)) => {
                let out = feedback_with_kernel(&raw, &self.fb_history, fb, kernel)?;
                self.ops.add(ops::FEEDBACK_SUBTRACTIONS, n);
                let stored = match fb.fb_source {
                    FeedbackSource::Output => out.clone(),
                    FeedbackSource::Raw => raw,
                };
                self.fb_history.push(self.fb_index, stored)?;
                self.fb_index += 1;
                out
            }
        };
        Ok(StmdNetFrame { locate, directions })
    }
}

impl Detector for StmdNet {
    fn kind(&self) -> DetectorKind {
        if self.feedback.is_some() {
            DetectorKind::StmdNetF
        } else {
            DetectorKind::StmdNet
        }
    }

    fn warmup_frames(&self) -> usize {
        self.front.horizon() - 1
    }

    fn step(&mut self, frame: &Grid2D) -> Result<DetectorOutput> {
        let out = self.process(frame)?;
        Ok(DetectorOutput {
            response: out.locate,
            directions: Some(out.directions),
        })
    }

    fn frame_ops(&self) -> &OpCounts {
        &self.ops
    }

    fn reset(&mut self) {
        self.front = FrontEnd::new(&self.cfg.retina, &self.cfg.lamina).expect("config was validated at construction");
        self.state = None;
        self.fb_history.clear();
        self.fb_index = 0;
        self.ops.clear();
    }
}
