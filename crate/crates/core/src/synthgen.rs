//! Deterministic synthetic sequences: a small rectangular target moving over
//! a panned, wrapping background texture, with exact ground-truth tracks.
//!
//! Pixel `(row, col)` covers the unit square centred on `(x = col, y = row)`.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StmdError};
use crate::pixelgrid::Grid2D;
use crate::stmdnet::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    /// Vertical stripes of random widths and luminances.
    Stripes,
    /// Octave-summed value noise.
    FilteredNoise,
    /// Flat background at the mean luminance.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetPath {
    Linear {
        start: [f64; 2],
        velocity: [f64; 2],
    },
    Circular {
        center: [f64; 2],
        radius: f64,
        /// Radians per frame; positive turns clockwise on screen (y down).
        angular_speed: f64,
        /// Polar angle of the target at frame 0.
        phase: f64,
    },
}

impl TargetPath {
    pub fn center_at(&self, n: f64) -> [f64; 2] {
        match *self {
            Self::Linear { start, velocity } => [start[0] + velocity[0] * n, start[1] + velocity[1] * n],
            Self::Circular {
                center,
                radius,
                angular_speed,
                phase,
            } => {
                let a = phase + angular_speed * n;
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            }
        }
    }

    pub fn velocity_at(&self, n: f64) -> [f64; 2] {
        match *self {
            Self::Linear { velocity, .. } => velocity,
            Self::Circular {
                radius,
                angular_speed,
                phase,
                ..
            } => {
                let a = phase + angular_speed * n;
                [-radius * angular_speed * a.sin(), radius * angular_speed * a.cos()]
            }
        }
    }

    /// The same path traversed at `speed` px/frame, keeping its direction
    /// (linear) or sense of rotation (circular).
    pub fn with_speed(&self, speed: f64) -> Self {
        match *self {
            Self::Linear { start, velocity } => {
                let norm = velocity[0].hypot(velocity[1]);
                let dir = if norm > 0.0 {
                    [velocity[0] / norm, velocity[1] / norm]
                } else {
                    [1.0, 0.0]
                };
                Self::Linear {
                    start,
                    velocity: [dir[0] * speed, dir[1] * speed],
                }
            }
            Self::Circular {
                center,
                radius,
                angular_speed,
                phase,
            } => Self::Circular {
                center,
                radius,
                angular_speed: (speed / radius).copysign(angular_speed),
                phase,
            },
        }
    }

    pub fn heading_at(&self, n: f64) -> f64 {
        match *self {
            Self::Linear { velocity, .. } => wrap_angle(velocity[1].atan2(velocity[0])),
            Self::Circular {
                angular_speed, phase, ..
            } => {
                let turn = if angular_speed >= 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 };
                wrap_angle(phase + angular_speed * n + turn)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
    pub bg_velocity: [f64; 2],
    pub bg_texture: Texture,
    /// Peak-to-peak luminance spread of the texture.
    pub bg_contrast: f64,
    pub bg_mean_luminance: f64,
    /// Target `[width, height]` in pixels.
    pub target_size: [f64; 2],
    pub target_luminance: f64,
    pub target_path: TargetPath,
    pub base_rate_hz: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 470,
            height: 310,
            frames: 300,
            seed: 1,
            bg_velocity: [0.0, 0.0],
            bg_texture: Texture::Stripes,
            bg_contrast: 0.3,
            bg_mean_luminance: 0.7,
            target_size: [5.0, 5.0],
            target_luminance: 0.05,
            target_path: TargetPath::Circular {
                center: [235.0, 155.0],
                radius: 120.0,
                angular_speed: 1.0 / 120.0,
                phase: 0.0,
            },
            base_rate_hz: 1000.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |key: &str, reason: String| StmdError::Config {
            key: format!("synth.{key}"),
            reason,
        };
        if self.width < 8 || self.height < 8 {
            return Err(cfg_err("width", "frame must be at least 8x8".into()));
        }
        if self.frames == 0 {
            return Err(cfg_err("frames", "must be positive".into()));
        }
        for (key, v) in [
            ("target_luminance", self.target_luminance),
            ("bg_mean_luminance", self.bg_mean_luminance),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(cfg_err(key, format!("{v} is outside [0, 1]")));
            }
        }
        let lo = self.bg_mean_luminance - self.bg_contrast / 2.0;
        let hi = self.bg_mean_luminance + self.bg_contrast / 2.0;
        if !(self.bg_contrast >= 0.0) || lo < -1e-12 || hi > 1.0 + 1e-12 {
            return Err(cfg_err(
                "bg_contrast",
                format!("texture range [{lo}, {hi}] leaves [0, 1]"),
            ));
        }
        if !(self.target_size[0] > 0.0 && self.target_size[1] > 0.0) {
            return Err(cfg_err("target_size", "must be positive".into()));
        }
        if self.bg_velocity.iter().any(|v| !v.is_finite()) {
            return Err(cfg_err("bg_velocity", "must be finite".into()));
        }
        let [hw, hh] = [self.target_size[0] / 2.0, self.target_size[1] / 2.0];
        for n in 0..self.frames {
            let [x, y] = self.target_path.center_at(n as f64);
            let inside = x - hw >= -0.5
                && x + hw <= self.width as f64 - 0.5
                && y - hh >= -0.5
                && y + hh <= self.height as f64 - 0.5;
            if !inside {
                return Err(StmdError::PathOutOfFrame { frame: n, x, y });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame_index: usize,
    pub center: [f64; 2],
    pub velocity: [f64; 2],
    pub heading: f64,
}

/// Background panorama and target description for one configuration.
#[derive(Debug, Clone)]
pub struct Scene {
    cfg: SynthConfig,
    pano_width: usize,
    panorama: Vec<f64>,
}

impl Scene {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let pano_width = 4 * cfg.width;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let panorama = match cfg.bg_texture {
            Texture::Uniform => vec![cfg.bg_mean_luminance; pano_width * cfg.height],
            Texture::Stripes => stripes(&cfg, pano_width, &mut rng),
            Texture::FilteredNoise => value_noise(&cfg, pano_width, &mut rng),
        };
        Ok(Self {
            cfg,
            pano_width,
            panorama,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn track_point(&self, n: usize) -> TrackPoint {
        let p = &self.cfg.target_path;
        TrackPoint {
            frame_index: n,
            center: p.center_at(n as f64),
            velocity: p.velocity_at(n as f64),
            heading: p.heading_at(n as f64),
        }
    }

    fn pano(&self, row: usize, col: usize) -> f64 {
        self.panorama[row * self.pano_width + col]
    }

    /// Background at frame `n`, panned by `n · bg_velocity` with wraparound.
    pub fn background(&self, n: usize) -> Vec<f64> {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let ox = self.cfg.bg_velocity[0] * n as f64;
        let oy = self.cfg.bg_velocity[1] * n as f64;
        let (fx, fy) = (ox.floor(), oy.floor());
        let (ax, ay) = (ox - fx, oy - fy);
        let bx = (fx as i64).rem_euclid(self.pano_width as i64) as usize;
        let by = (fy as i64).rem_euclid(h as i64) as usize;
        let mut out = Vec::with_capacity(w * h);
        for r in 0..h {
            let r0 = (r + by) % h;
            let r1 = (r0 + 1) % h;
            for c in 0..w {
                let c0 = (c + bx) % self.pano_width;
                let c1 = (c0 + 1) % self.pano_width;
                let top = self.pano(r0, c0) * (1.0 - ax) + self.pano(r0, c1) * ax;
                let bottom = self.pano(r1, c0) * (1.0 - ax) + self.pano(r1, c1) * ax;
                out.push(top * (1.0 - ay) + bottom * ay);
            }
        }
        out
    }

    /// Frame `n` with the target composited at `center` by area coverage.
    pub fn render(&self, n: usize, center: [f64; 2]) -> Grid2D {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut lum = self.background(n);
        let [tw, th] = self.cfg.target_size;
        let (x0, x1) = (center[0] - tw / 2.0, center[0] + tw / 2.0);
        let (y0, y1) = (center[1] - th / 2.0, center[1] + th / 2.0);
        let c_lo = ((x0 + 0.5).floor().max(0.0)) as usize;
        let c_hi = ((x1 + 0.5).ceil().max(0.0) as usize).min(w);
        let r_lo = ((y0 + 0.5).floor().max(0.0)) as usize;
        let r_hi = ((y1 + 0.5).ceil().max(0.0) as usize).min(h);
        for r in r_lo..r_hi {
            let cy = overlap(r as f64 - 0.5, r as f64 + 0.5, y0, y1);
            if cy <= 0.0 {
                continue;
            }
            for c in c_lo..c_hi {
                let cov = cy * overlap(c as f64 - 0.5, c as f64 + 0.5, x0, x1);
                if cov > 0.0 {
                    let v = &mut lum[r * w + c];
                    *v = *v * (1.0 - cov) + self.cfg.target_luminance * cov;
                }
            }
        }
        Grid2D::from_raw(h, w, lum.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
    }

    pub fn frame(&self, n: usize) -> Grid2D {
        self.render(n, self.cfg.target_path.center_at(n as f64))
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn stripes(cfg: &SynthConfig, pano_width: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lo = cfg.bg_mean_luminance - cfg.bg_contrast / 2.0;
    let mut columns = Vec::with_capacity(pano_width);
    let mut bright = rng.random_bool(0.5);
    while columns.len() < pano_width {
        let width = rng.random_range(4..=40usize);
        // Alternate between the upper and lower halves of the range so that
        // neighbouring stripes always differ.
        let u: f64 = rng.random_range(0.0..0.5);
        let level = lo + cfg.bg_contrast * if bright { 0.5 + u } else { u };
        bright = !bright;
        columns.extend(std::iter::repeat_n(level, width));
    }
    columns.truncate(pano_width);
    let mut out = Vec::with_capacity(pano_width * cfg.height);
    for _ in 0..cfg.height {
        out.extend_from_slice(&columns);
    }
    out
}

fn value_noise(cfg: &SynthConfig, pano_width: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let h = cfg.height;
    let mut acc = vec![0.0f64; pano_width * h];
    let mut amplitude = 1.0;
    // Lattice cells of 64, 32, 16 and 8 pixels; horizontal periods divide the
    // panorama width so the texture wraps seamlessly.
    for cell in [64usize, 32, 16, 8] {
        let nx = pano_width.div_ceil(cell).max(1);
        let ny = h.div_ceil(cell) + 1;
        let lattice: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sx = nx as f64 / pano_width as f64;
        for r in 0..h {
            let gy = r as f64 / cell as f64;
            let (y0, ty) = (gy.floor() as usize, smooth(gy.fract()));
            let y1 = (y0 + 1).min(ny - 1);
            for c in 0..pano_width {
                let gx = c as f64 * sx;
                let (x0, tx) = (gx.floor() as usize % nx, smooth(gx.fract()));
                let x1 = (x0 + 1) % nx;
                let l = |x: usize, y: usize| lattice[y * nx + x];
                let top = l(x0, y0) * (1.0 - tx) + l(x1, y0) * tx;
                let bottom = l(x0, y1) * (1.0 - tx) + l(x1, y1) * tx;
                acc[r * pano_width + c] += amplitude * (top * (1.0 - ty) + bottom * ty);
            }
        }
        amplitude *= 0.5;
    }
    let (min, max) = acc
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (max - min).max(1e-12);
    let lo = cfg.bg_mean_luminance - cfg.bg_contrast / 2.0;
    acc.iter().map(|v| lo + cfg.bg_contrast * (v - min) / span).collect()
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// A rendered sequence with its ground truth.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub frames: Vec<Grid2D>,
    pub track: Vec<TrackPoint>,
    pub rate_hz: f64,
}

pub fn generate_sequence(cfg: &SynthConfig) -> Result<Sequence> {
    let scene = Scene::new(*cfg)?;
    let frames = (0..cfg.frames).map(|n| scene.frame(n)).collect();
    let track = (0..cfg.frames).map(|n| scene.track_point(n)).collect();
    Ok(Sequence {
        frames,
        track,
        rate_hz: cfg.base_rate_hz,
    })
}

/// Keeps every `factor`-th frame (the tail that does not fill a full step is
/// dropped), renumbers frames and scales velocities to the new frame rate.
pub fn downsample_rate(seq: &Sequence, factor: usize) -> Result<Sequence> {
    if factor == 0 {
        return Err(StmdError::param("factor", "must be at least 1"));
    }
    if factor >= seq.frames.len() && factor > 1 {
        return Err(StmdError::param(
            "factor",
            format!("{factor} leaves nothing of a {}-frame sequence", seq.frames.len()),
        ));
    }
    let keep = seq.frames.len() / factor;
    let frames = (0..keep).map(|k| seq.frames[k * factor].clone()).collect();
    let track = (0..keep)
        .map(|k| {
            let p = seq.track[k * factor];
            TrackPoint {
                frame_index: k,
                center: p.center,
                velocity: [p.velocity[0] * factor as f64, p.velocity[1] * factor as f64],
                heading: p.heading,
            }
        })
        .collect();
    Ok(Sequence {
        frames,
        track,
        rate_hz: seq.rate_hz / factor as f64,
    })
}

/// Polar angle convenience for circular paths starting at a given heading.
pub fn circular_phase_for_heading(heading: f64, angular_speed: f64) -> f64 {
    let turn = if angular_speed >= 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 };
    (heading - turn).rem_euclid(TAU)
}
