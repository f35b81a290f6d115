//! Delay-and-correlate detectors: the HR, BL and HR/BL elementary motion
//! detectors and the ESTMD / DSTMD small-target backbones.
//!
//! Spatial offsets are `(dx, dy)` in image coordinates (x to the right, y
//! downwards); samples shifted outside the grid read as zero.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorKind, DetectorOutput};
use crate::error::{Result, StmdError};
use crate::frontend::{FrontEnd, LaminaConfig, RetinaConfig};
use crate::ops::{self, OpCounts};
use crate::pixelgrid::{convolve_separable, FrameRing, Grid2D, Kernel1D, OnOffSignals, Scalar};
use crate::stmdnet::DirectionField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmdConfig {
    pub delay_tau: usize,
    pub offset: [i64; 2],
    pub second_delay: usize,
    pub second_offset: [i64; 2],
    pub division_guard: f64,
}

impl Default for EmdConfig {
    fn default() -> Self {
        Self {
            delay_tau: 1,
            offset: [-1, 0],
            second_delay: 1,
            second_offset: [1, 0],
            division_guard: 1e-3,
        }
    }
}

impl EmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delay_tau < 1 {
            return Err(StmdError::param("delay_tau", "must be at least 1"));
        }
        if self.second_delay < 1 {
            return Err(StmdError::param("second_delay", "must be at least 1"));
        }
        if !(self.division_guard > 0.0) {
            return Err(StmdError::param("division_guard", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DstmdConfig {
    pub directions: usize,
    pub alpha_sep: f64,
    pub tau1: usize,
    pub tau3: usize,
    pub delay_tau: usize,
}

impl Default for DstmdConfig {
    fn default() -> Self {
        Self {
            directions: 8,
            alpha_sep: 2.0,
            tau1: 1,
            tau3: 3,
            delay_tau: 3,
        }
    }
}

impl DstmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.directions < 2 {
            return Err(StmdError::param("directions", "need at least 2"));
        }
        if !(self.alpha_sep >= 1.0) {
            return Err(StmdError::param("alpha_sep", "must be at least 1 pixel"));
        }
        Ok(())
    }

    /// Preferred angle of each directional channel, radians.
    pub fn angles(&self) -> Vec<f64> {
        (0..self.directions)
            .map(|i| TAU * i as f64 / self.directions as f64)
            .collect()
    }

    /// `round(α·(cos θ, sin θ))` for every channel.
    pub fn offsets(&self) -> Vec<[i64; 2]> {
        self.angles()
            .into_iter()
            .map(|t| {
                [
                    (self.alpha_sep * t.cos()).round() as i64,
                    (self.alpha_sep * t.sin()).round() as i64,
                ]
            })
            .collect()
    }

    pub fn horizon(&self) -> usize {
        self.tau1.max(self.tau3).max(self.delay_tau)
    }
}

/// Samples `grid` at `(row + dy, col + dx)` for every pixel; zero outside.
fn shifted<T: Scalar>(grid: &Grid2D<T>, offset: [i64; 2]) -> Grid2D<T> {
    let (h, w) = grid.shape();
    let [dx, dy] = offset;
    Grid2D::from_fn(h, w, |r, c| {
        grid.get_or_zero(r as isize + dy as isize, c as isize + dx as isize)
    })
}

/// `O(z,t) = I(z′, t−τ) · I(z, t)`.
pub fn hr_detect<T: Scalar>(history: &FrameRing<Grid2D<T>>, cfg: &EmdConfig) -> Result<Grid2D<T>> {
    let now = history.delayed(0)?;
    let past = shifted(history.delayed(cfg.delay_tau)?, cfg.offset);
    now.zip_map(&past, |a, b| a * b)
}

/// `O(z,t) = I(z,t) / (I(z′, t−τ) + ε)`.
pub fn bl_detect<T: Scalar>(history: &FrameRing<Grid2D<T>>, cfg: &EmdConfig) -> Result<Grid2D<T>> {
    let eps = T::from_f64_lossy(cfg.division_guard);
    let now = history.delayed(0)?;
    let past = shifted(history.delayed(cfg.delay_tau)?, cfg.offset);
    now.zip_map(&past, |a, b| a / (b + eps))
}

/// `O(z,t) = I(z′, t−τ₁) · I(z,t) / (I(z″, t−τ₂) + ε)`.
pub fn hrbl_detect<T: Scalar>(history: &FrameRing<Grid2D<T>>, cfg: &EmdConfig) -> Result<Grid2D<T>> {
    let eps = T::from_f64_lossy(cfg.division_guard);
    let now = history.delayed(0)?;
    let enhance = shifted(history.delayed(cfg.delay_tau)?, cfg.offset);
    let suppress = shifted(history.delayed(cfg.second_delay)?, cfg.second_offset);
    let numerator = now.zip_map(&enhance, |a, b| a * b)?;
    numerator.zip_map(&suppress, |n, d| n / (d + eps))
}

/// `O(z,t) = ON(z,t) · OFF(z, t−τ)`.
pub fn estmd_detect<T: Scalar>(history: &FrameRing<OnOffSignals<T>>, tau: usize) -> Result<Grid2D<T>> {
    let now = history.delayed(0)?;
    let past = history.delayed(tau)?;
    now.on.zip_map(&past.off, |a, b| a * b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DstmdOutput<T = f32> {
    /// One response map per preferred direction, in the order of
    /// [`DstmdConfig::angles`].
    pub responses: Vec<Grid2D<T>>,
    pub directions: DirectionField,
}

impl<T: Scalar> DstmdOutput<T> {
    /// Strongest directional response per pixel.
    pub fn max_response(&self) -> Grid2D<T> {
        let (h, w) = self.responses[0].shape();
        let mut out = self.responses[0].clone();
        for resp in &self.responses[1..] {
            for (o, &v) in out.as_mut_slice().iter_mut().zip(resp.as_slice()) {
                if v > *o {
                    *o = v;
                }
            }
        }
        debug_assert_eq!(out.shape(), (h, w));
        out
    }
}

/// `O(z,t,θ) = ON(z,t)·OFF(z′,t−τ₃)·[ON(z,t−τ₁) + OFF(z′,t−τ)]` with
/// `z′ = z + round(α·(cos θ, sin θ))`; direction is the argmax over θ.
pub fn dstmd_detect<T: Scalar>(history: &FrameRing<OnOffSignals<T>>, cfg: &DstmdConfig) -> Result<DstmdOutput<T>> {
    cfg.validate()?;
    let now = history.delayed(0)?;
    let off_tau3 = &history.delayed(cfg.tau3)?.off;
    let on_tau1 = &history.delayed(cfg.tau1)?.on;
    let off_tau = &history.delayed(cfg.delay_tau)?.off;
    let (h, w) = now.shape();

    let angles = cfg.angles();
    let mut responses = Vec::with_capacity(cfg.directions);
    for offset in cfg.offsets() {
        let a = shifted(off_tau3, offset);
        let b = shifted(off_tau, offset);
        let mut out = vec![T::zero(); h * w];
        for (i, o) in out.iter_mut().enumerate() {
            let on = now.on.as_slice()[i];
            *o = on * a.as_slice()[i] * (on_tau1.as_slice()[i] + b.as_slice()[i]);
        }
        responses.push(Grid2D::from_raw(h, w, out));
    }

    let mut directions = DirectionField::undefined(h, w);
    for i in 0..h * w {
        let mut best = (0usize, T::zero());
        for (d, resp) in responses.iter().enumerate() {
            let v = resp.as_slice()[i];
            if v > best.1 {
                best = (d, v);
            }
        }
        if best.1 > T::zero() {
            directions.set_index(i, angles[best.0] as f32, best.1.as_f64() as f32);
        }
    }
    Ok(DstmdOutput { responses, directions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmdVariant {
    Hr,
    Bl,
    HrBl,
}

/// Retina followed by one of the elementary motion detectors.
#[derive(Debug, Clone)]
pub struct EmdPipeline {
    variant: EmdVariant,
    cfg: EmdConfig,
    retina: Kernel1D,
    history: FrameRing<Grid2D>,
    next_index: u64,
    ops: OpCounts,
}

impl EmdPipeline {
    pub fn new(variant: EmdVariant, retina: &RetinaConfig, cfg: EmdConfig) -> Result<Self> {
        cfg.validate()?;
        let horizon = match variant {
            EmdVariant::HrBl => cfg.delay_tau.max(cfg.second_delay),
            _ => cfg.delay_tau,
        };
        Ok(Self {
            variant,
            cfg,
            retina: retina.kernel()?,
            history: FrameRing::new(horizon + 1),
            next_index: 0,
            ops: OpCounts::new(),
        })
    }
}

impl Detector for EmdPipeline {
    fn kind(&self) -> DetectorKind {
        match self.variant {
            EmdVariant::Hr => DetectorKind::Hr,
            EmdVariant::Bl => DetectorKind::Bl,
            EmdVariant::HrBl => DetectorKind::HrBl,
        }
    }

    fn warmup_frames(&self) -> usize {
        self.history.capacity() - 1
    }

    fn step(&mut self, frame: &Grid2D) -> Result<DetectorOutput> {
        self.ops.clear();
        let smoothed = convolve_separable(frame, &self.retina, &self.retina)?;
        self.history.push(self.next_index, smoothed)?;
        self.next_index += 1;
        let (h, w) = frame.shape();
        if self.history.depth() < self.history.capacity() {
            return Ok(DetectorOutput::silent(h, w, false));
        }
        let response = match self.variant {
            EmdVariant::Hr => hr_detect(&self.history, &self.cfg)?,
            EmdVariant::Bl => bl_detect(&self.history, &self.cfg)?,
            EmdVariant::HrBl => hrbl_detect(&self.history, &self.cfg)?,
        };
        self.ops.add(ops::EMD_EVALUATIONS, (h * w) as u64);
        Ok(DetectorOutput {
            response,
            directions: None,
        })
    }

    fn frame_ops(&self) -> &OpCounts {
        &self.ops
    }

    fn reset(&mut self) {
        self.history.clear();
        self.next_index = 0;
        self.ops.clear();
    }
}

/// Shared retina → lamina → ON/OFF history used by ESTMD and DSTMD.
#[derive(Debug, Clone)]
struct OnOffFrontEnd {
    front: FrontEnd,
    history: FrameRing<OnOffSignals>,
    next_index: u64,
}

impl OnOffFrontEnd {
    fn new(retina: &RetinaConfig, lamina: &LaminaConfig, horizon: usize) -> Result<Self> {
        Ok(Self {
            front: FrontEnd::new(retina, lamina)?,
            history: FrameRing::new(horizon + 1),
            next_index: 0,
        })
    }

    fn warmup_frames(&self) -> usize {
        self.front.horizon() - 1 + self.history.capacity() - 1
    }

    /// True once the ON/OFF history is deep enough for correlation.
    fn step(&mut self, frame: &Grid2D) -> Result<bool> {
        if let Some(signals) = self.front.step(frame)? {
            self.history.push(self.next_index, signals)?;
            self.next_index += 1;
        }
        Ok(self.history.depth() == self.history.capacity())
    }

    fn reset(&mut self, retina: &RetinaConfig, lamina: &LaminaConfig) -> Result<()> {
        self.front = FrontEnd::new(retina, lamina)?;
        self.history.clear();
        self.next_index = 0;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EstmdPipeline {
    retina: RetinaConfig,
    lamina: LaminaConfig,
    tau: usize,
    inner: OnOffFrontEnd,
    ops: OpCounts,
}

impl EstmdPipeline {
    pub fn new(retina: &RetinaConfig, lamina: &LaminaConfig, tau: usize) -> Result<Self> {
        if tau < 1 {
            return Err(StmdError::param("tau", "must be at least 1"));
        }
        Ok(Self {
            retina: *retina,
            lamina: *lamina,
            tau,
            inner: OnOffFrontEnd::new(retina, lamina, tau)?,
            ops: OpCounts::new(),
        })
    }
}

impl Detector for EstmdPipeline {
    fn kind(&self) -> DetectorKind {
        DetectorKind::Estmd
    }

    fn warmup_frames(&self) -> usize {
        self.inner.warmup_frames()
    }

    fn step(&mut self, frame: &Grid2D) -> Result<DetectorOutput> {
        self.ops.clear();
        let (h, w) = frame.shape();
        if !self.inner.step(frame)? {
            return Ok(DetectorOutput::silent(h, w, false));
        }
        let response = estmd_detect(&self.inner.history, self.tau)?;
        self.ops.add(ops::ESTMD_CORRELATIONS, (h * w) as u64);
        Ok(DetectorOutput {
            response,
            directions: None,
        })
    }

    fn frame_ops(&self) -> &OpCounts {
        &self.ops
    }

    fn reset(&mut self) {
        self.inner
            .reset(&self.retina, &self.lamina)
            .expect("config was validated at construction");
        self.ops.clear();
    }
}

#[derive(Debug, Clone)]
pub struct DstmdPipeline {
    retina: RetinaConfig,
    lamina: LaminaConfig,
    cfg: DstmdConfig,
    inner: OnOffFrontEnd,
    ops: OpCounts,
}

impl DstmdPipeline {
    pub fn new(retina: &RetinaConfig, lamina: &LaminaConfig, cfg: DstmdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            retina: *retina,
            lamina: *lamina,
            cfg,
            inner: OnOffFrontEnd::new(retina, lamina, cfg.horizon())?,
            ops: OpCounts::new(),
        })
    }

    /// Full directional output of the most recent history, including every
    /// per-direction map.
    pub fn step_full(&mut self, frame: &Grid2D) -> Result<Option<DstmdOutput>> {
        self.ops.clear();
        if !self.inner.step(frame)? {
            return Ok(None);
        }
        let out = dstmd_detect(&self.inner.history, &self.cfg)?;
        let (h, w) = frame.shape();
        self.ops
            .add(ops::DIRECTIONAL_CORRELATIONS, (self.cfg.directions * h * w) as u64);
        Ok(Some(out))
    }
}

impl Detector for DstmdPipeline {
    fn kind(&self) -> DetectorKind {
        DetectorKind::Dstmd
    }

    fn warmup_frames(&self) -> usize {
        self.inner.warmup_frames()
    }

    fn step(&mut self, frame: &Grid2D) -> Result<DetectorOutput> {
        let (h, w) = frame.shape();
        Ok(match self.step_full(frame)? {
            None => DetectorOutput::silent(h, w, true),
            Some(out) => DetectorOutput {
                response: out.max_response(),
                directions: Some(out.directions),
            },
        })
    }

    fn frame_ops(&self) -> &OpCounts {
        &self.ops
    }

    fn reset(&mut self) {
        self.inner
            .reset(&self.retina, &self.lamina)
            .expect("config was validated at construction");
        self.ops.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring<T: Clone>(frames: &[T]) -> FrameRing<T> {
        let mut r = FrameRing::new(frames.len());
        for (i, f) in frames.iter().enumerate() {
            r.push(i as u64, f.clone()).unwrap();
        }
        r
    }

    #[test]
    fn hr_constant_field() {
        let c = 0.6f64;
        let frames = vec![Grid2D::filled(4, 4, c); 2];
        let out = hr_detect(&ring(&frames), &EmdConfig::default()).unwrap();
        for r in 0..4 {
            for col in 1..4 {
                assert!((out.get(r, col) - c * c).abs() < 1e-15);
            }
            // Left border reads the shifted sample from outside.
            assert_eq!(out.get(r, 0), 0.0);
        }
    }

    #[test]
    fn hr_null_when_delayed_frame_is_zero() {
        let frames = vec![Grid2D::zeros(3, 3), Grid2D::filled(3, 3, 0.9f64)];
        let out = hr_detect(&ring(&frames), &EmdConfig::default()).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bl_ratio_of_equals() {
        let c = 0.8f64;
        let cfg = EmdConfig::default();
        let frames = vec![Grid2D::filled(3, 3, c); 2];
        let out = bl_detect(&ring(&frames), &cfg).unwrap();
        for r in 0..3 {
            for col in 1..3 {
                assert!((out.get(r, col) - 1.0).abs() <= cfg.division_guard / c);
            }
        }
        let zero_now = vec![Grid2D::filled(3, 3, c), Grid2D::zeros(3, 3)];
        let out = bl_detect(&ring(&zero_now), &cfg).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hrbl_unit_input() {
        let cfg = EmdConfig::default();
        let frames = vec![Grid2D::filled(3, 5, 1.0f64); 2];
        let out = hrbl_detect(&ring(&frames), &cfg).unwrap();
        for r in 0..3 {
            for col in 1..4 {
                assert!((out.get(r, col) - 1.0 / (1.0 + cfg.division_guard)).abs() < 1e-12);
            }
        }
        let dark_past = vec![Grid2D::zeros(3, 5), Grid2D::filled(3, 5, 1.0f64)];
        let out = hrbl_detect(&ring(&dark_past), &cfg).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn estmd_single_coincidence() {
        let tau = 3;
        let (a, b) = (0.7f64, 0.4f64);
        let mut frames = vec![OnOffSignals::<f64>::zeros(3, 3); tau + 1];
        frames[0].off.set(1, 2, b);
        frames[tau].on.set(1, 2, a);
        let out = estmd_detect(&ring(&frames), tau).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let expected = if (r, c) == (1, 2) { a * b } else { 0.0 };
                assert_eq!(out.get(r, c), expected);
            }
        }
    }

    #[test]
    fn estmd_on_only_is_silent() {
        let mut frames = vec![OnOffSignals::<f64>::zeros(2, 2); 3];
        for f in &mut frames {
            f.on = Grid2D::filled(2, 2, 1.0);
        }
        let out = estmd_detect(&ring(&frames), 2).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dstmd_offsets_are_eight_neighbours() {
        let cfg = DstmdConfig {
            alpha_sep: 1.0,
            ..DstmdConfig::default()
        };
        let offsets = cfg.offsets();
        assert_eq!(
            offsets,
            vec![[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1]]
        );
    }

    #[test]
    fn dstmd_zero_on_channel() {
        let cfg = DstmdConfig::default();
        let mut frames = vec![OnOffSignals::<f64>::zeros(5, 5); cfg.horizon() + 1];
        for f in &mut frames {
            f.off = Grid2D::filled(5, 5, 0.5);
        }
        let out = dstmd_detect(&ring(&frames), &cfg).unwrap();
        assert_eq!(out.responses.len(), 8);
        for r in &out.responses {
            assert!(r.as_slice().iter().all(|&v| v == 0.0));
        }
        assert_eq!(out.directions.defined_count(), 0);
    }

    #[test]
    fn warmup_outputs_are_silent() {
        let mut det = EstmdPipeline::new(&RetinaConfig::default(), &LaminaConfig::plain(), 4).unwrap();
        assert_eq!(det.warmup_frames(), 5);
        let frame = Grid2D::filled(8, 8, 0.5f32);
        for _ in 0..det.warmup_frames() {
            let out = det.step(&frame).unwrap();
            assert!(out.response.as_slice().iter().all(|&v| v == 0.0));
            assert!(det.frame_ops().is_empty());
        }
        det.step(&frame).unwrap();
        assert_eq!(det.frame_ops().get(ops::ESTMD_CORRELATIONS), 64);
    }
}
