//! Early vision shared by every detector: retina smoothing, lamina temporal
//! filtering and the ON/OFF split.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StmdError};
use crate::pixelgrid::{
    convolve_separable, gaussian_kernel, rectify_pair, FrameRing, Grid2D, Kernel1D, OnOffSignals, Scalar,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetinaConfig {
    pub sigma: f64,
    pub radius: usize,
}

impl Default for RetinaConfig {
    fn default() -> Self {
        Self { sigma: 1.0, radius: 2 }
    }
}

impl RetinaConfig {
    pub fn kernel(&self) -> Result<Kernel1D> {
        gaussian_kernel(self.sigma, self.radius)
    }
}

/// Gaussian-smoothed luminance.
pub fn retina_smooth<T: Scalar>(frame: &Grid2D<T>, cfg: &RetinaConfig) -> Result<Grid2D<T>> {
    let k = cfg.kernel()?;
    convolve_separable(frame, &k, &k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaminaMode {
    /// `I(t) − I(t−1)`.
    PlainDiff,
    /// Truncated Grünwald–Letnikov fractional difference.
    Fractional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaminaConfig {
    pub mode: LaminaMode,
    pub frac_order: f64,
    pub memory: usize,
}

impl LaminaConfig {
    pub fn plain() -> Self {
        Self {
            mode: LaminaMode::PlainDiff,
            frac_order: 1.0,
            memory: 2,
        }
    }

    pub fn fractional(frac_order: f64, memory: usize) -> Self {
        Self {
            mode: LaminaMode::Fractional,
            frac_order,
            memory,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frac_order > 0.0 && self.frac_order <= 1.0) {
            return Err(StmdError::param(
                "frac_order",
                format!("must lie in (0, 1], got {}", self.frac_order),
            ));
        }
        if self.memory < 2 {
            return Err(StmdError::param("memory", "must be at least 2 frames"));
        }
        Ok(())
    }

    /// Frames of history the filter reads.
    pub fn horizon(&self) -> usize {
        match self.mode {
            LaminaMode::PlainDiff => 2,
            LaminaMode::Fractional => self.memory,
        }
    }
}

impl Default for LaminaConfig {
    fn default() -> Self {
        Self::fractional(0.8, 10)
    }
}

/// `w_0 = 1`, `w_k = w_{k−1}·(k−1−α)/k`.
pub fn grunwald_letnikov_weights(order: f64, count: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(count);
    let mut prev = 1.0;
    for k in 0..count {
        if k > 0 {
            prev *= (k as f64 - 1.0 - order) / k as f64;
        }
        w.push(prev);
    }
    w
}

/// Lamina with its weights precomputed from a validated config.
#[derive(Debug, Clone)]
pub struct Lamina {
    cfg: LaminaConfig,
    weights: Vec<f64>,
}

impl Lamina {
    pub fn new(cfg: LaminaConfig) -> Result<Self> {
        cfg.validate()?;
        let weights = match cfg.mode {
            LaminaMode::PlainDiff => vec![1.0, -1.0],
            LaminaMode::Fractional => grunwald_letnikov_weights(cfg.frac_order, cfg.memory),
        };
        Ok(Self { cfg, weights })
    }

    pub fn config(&self) -> &LaminaConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn horizon(&self) -> usize {
        self.weights.len()
    }

    /// `Σ_k w_k · I(t−k)` over the stored history.
    pub fn apply<T: Scalar>(&self, history: &FrameRing<Grid2D<T>>) -> Result<Grid2D<T>> {
        let needed = self.weights.len();
        if history.depth() < needed {
            return Err(StmdError::WarmUp {
                delay: needed - 1,
                depth: history.depth(),
            });
        }
        let newest = history.delayed(0)?;
        let (h, w) = newest.shape();
        let mut out = vec![T::zero(); h * w];
        for (k, &wk) in self.weights.iter().enumerate() {
            let frame = history.delayed(k)?;
            newest.check_shape(frame)?;
            let wk = T::from_f64_lossy(wk);
            for (o, &v) in out.iter_mut().zip(frame.as_slice()) {
                *o = *o + wk * v;
            }
        }
        Ok(Grid2D::from_raw(h, w, out))
    }
}

pub fn lamina_filter<T: Scalar>(history: &FrameRing<Grid2D<T>>, cfg: &LaminaConfig) -> Result<Grid2D<T>> {
    Lamina::new(*cfg)?.apply(history)
}

/// Named pipeline stage for the ON/OFF split.
pub fn split_on_off<T: Scalar>(lamina_out: &Grid2D<T>) -> OnOffSignals<T> {
    rectify_pair(lamina_out)
}

/// Retina followed by the lamina, owning the photoreceptor history.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    retina: Kernel1D,
    lamina: Lamina,
    history: FrameRing<Grid2D>,
    next_index: u64,
}

impl FrontEnd {
    pub fn new(retina: &RetinaConfig, lamina: &LaminaConfig) -> Result<Self> {
        let lamina = Lamina::new(*lamina)?;
        Ok(Self {
            retina: retina.kernel()?,
            history: FrameRing::new(lamina.horizon()),
            lamina,
            next_index: 0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.lamina.horizon()
    }

    /// Smooths `frame` into the history and returns the ON/OFF split of the
    /// lamina output, or `None` while the history is still filling.
    pub fn step(&mut self, frame: &Grid2D) -> Result<Option<OnOffSignals>> {
        let smoothed = convolve_separable(frame, &self.retina, &self.retina)?;
        if let Ok(prev) = self.history.delayed(0) {
            prev.check_shape(&smoothed)?;
        }
        self.history.push(self.next_index, smoothed)?;
        self.next_index += 1;
        if self.history.depth() < self.lamina.horizon() {
            return Ok(None);
        }
        let lamina = self.lamina.apply(&self.history)?;
        Ok(Some(split_on_off(&lamina)))
    }

    /// Photoreceptor output of the newest frame.
    pub fn latest_smoothed(&self) -> Option<&Grid2D> {
        self.history.delayed(0).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_of(frames: &[Grid2D<f64>]) -> FrameRing<Grid2D<f64>> {
        let mut ring = FrameRing::new(frames.len().max(1));
        for (i, f) in frames.iter().enumerate() {
            ring.push(i as u64, f.clone()).unwrap();
        }
        ring
    }

    #[test]
    fn plain_diff_of_constant_is_zero() {
        let frames = vec![Grid2D::filled(3, 3, 0.7); 2];
        let out = lamina_filter(&ring_of(&frames), &LaminaConfig::plain()).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plain_diff_of_ramp_is_slope() {
        let frames: Vec<_> = (0..4).map(|t| Grid2D::filled(2, 2, 0.25 * t as f64)).collect();
        let out = lamina_filter(&ring_of(&frames), &LaminaConfig::plain()).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn integer_order_limit_is_plain_diff() {
        let w = grunwald_letnikov_weights(1.0, 2);
        assert_eq!(w, vec![1.0, -1.0]);
    }

    #[test]
    fn half_order_weights() {
        let w = grunwald_letnikov_weights(0.5, 4);
        let expected = [1.0, -0.5, -0.125, -0.0625];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fractional_partial_sums_shrink_toward_zero() {
        for &alpha in &[0.2, 0.5, 0.8, 0.95] {
            let w = grunwald_letnikov_weights(alpha, 64);
            assert_eq!(w[0], 1.0);
            assert!(w[1..].iter().all(|&x| x < 0.0));
            let mut partial = 0.0;
            let mut last = f64::INFINITY;
            for &x in &w {
                partial += x;
                assert!(partial > 0.0 && partial < last);
                last = partial;
            }
        }
    }

    #[test]
    fn fractional_residue_on_constant_input() {
        let c = 0.6;
        let mut residues = Vec::new();
        for memory in [4, 8, 16, 32] {
            let cfg = LaminaConfig::fractional(0.8, memory);
            let frames = vec![Grid2D::filled(2, 2, c); memory];
            let out = lamina_filter(&ring_of(&frames), &cfg).unwrap();
            let expected: f64 = grunwald_letnikov_weights(0.8, memory).iter().sum::<f64>() * c;
            assert!((out.get(0, 0) - expected).abs() < 1e-12);
            assert!(expected > 0.0);
            residues.push(expected);
        }
        assert!(residues.windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn warm_up_reported() {
        let frames = vec![Grid2D::filled(2, 2, 0.5); 3];
        let cfg = LaminaConfig::fractional(0.8, 10);
        assert!(matches!(
            lamina_filter(&ring_of(&frames), &cfg),
            Err(StmdError::WarmUp { .. })
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(LaminaConfig::fractional(0.0, 10).validate().is_err());
        assert!(LaminaConfig::fractional(1.2, 10).validate().is_err());
        assert!(LaminaConfig::fractional(0.5, 1).validate().is_err());
    }

    #[test]
    fn split_examples() {
        let g = Grid2D::from_vec(1, 2, vec![1.0f32, -1.0]).unwrap();
        let s = split_on_off(&g);
        assert_eq!(s.on.as_slice(), &[1.0, 0.0]);
        assert_eq!(s.off.as_slice(), &[0.0, 1.0]);
        let z = split_on_off(&Grid2D::<f32>::zeros(2, 2));
        assert_eq!(z, OnOffSignals::zeros(2, 2));
    }

    #[test]
    fn retina_keeps_constant_field() {
        let g = Grid2D::<f64>::filled(6, 7, 0.42);
        let out = retina_smooth(&g, &RetinaConfig::default()).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 0.42).abs() < 1e-12));
    }

    #[test]
    fn retina_preserves_interior_mass() {
        let mut g = Grid2D::<f64>::zeros(9, 9);
        g.set(4, 4, 1.0);
        let out = retina_smooth(&g, &RetinaConfig::default()).unwrap();
        assert!((out.sum() - 1.0).abs() < 1e-6);
        assert_eq!(out.get(4, 3), out.get(4, 5));
        assert_eq!(out.get(3, 4), out.get(5, 4));
        assert_eq!(out.argmax(), Some((4, 4)));
    }

    #[test]
    fn front_end_warms_up_for_memory_frames() {
        let mut fe = FrontEnd::new(&RetinaConfig::default(), &LaminaConfig::default()).unwrap();
        let frame = Grid2D::filled(8, 8, 0.5f32);
        for _ in 0..9 {
            assert!(fe.step(&frame).unwrap().is_none());
        }
        assert!(fe.step(&frame).unwrap().is_some());
    }
}
