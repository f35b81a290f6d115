//! Independent scalar reference implementations shared by the integration
//! and acceptance suites. Everything here works on plain `f64` slices with
//! explicit index arithmetic and never calls into the library's kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stmd_core::pixelgrid::{FrameRing, Grid2D, OnOffSignals};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A `t`-major stack of `h×w` frames.
#[derive(Debug, Clone)]
pub struct Stack {
    pub h: usize,
    pub w: usize,
    pub frames: Vec<Vec<f64>>,
}

impl Stack {
    pub fn random(rng: &mut ChaCha8Rng, h: usize, w: usize, t: usize) -> Self {
        let frames = (0..t)
            .map(|_| (0..h * w).map(|_| rng.random::<f64>()).collect())
            .collect();
        Self { h, w, frames }
    }

    /// Value at `(row, col)` of the frame `delay` steps before the last; zero
    /// outside the grid.
    pub fn at(&self, delay: usize, row: i64, col: i64) -> f64 {
        if row < 0 || col < 0 || row >= self.h as i64 || col >= self.w as i64 {
            return 0.0;
        }
        self.frames[self.frames.len() - 1 - delay][row as usize * self.w + col as usize]
    }

    pub fn ring<T: stmd_core::pixelgrid::Scalar>(&self) -> FrameRing<Grid2D<T>> {
        let mut ring = FrameRing::new(self.frames.len());
        for (i, f) in self.frames.iter().enumerate() {
            let g = Grid2D::from_vec(self.h, self.w, f.iter().map(|&v| T::from_f64(v).unwrap()).collect()).unwrap();
            ring.push(i as u64, g).unwrap();
        }
        ring
    }
}

/// Paired ON/OFF stacks.
pub fn on_off_ring<T: stmd_core::pixelgrid::Scalar>(on: &Stack, off: &Stack) -> FrameRing<OnOffSignals<T>> {
    let mut ring = FrameRing::new(on.frames.len());
    let conv = |s: &Stack, i: usize| {
        Grid2D::from_vec(s.h, s.w, s.frames[i].iter().map(|&v| T::from_f64(v).unwrap()).collect()).unwrap()
    };
    for i in 0..on.frames.len() {
        ring.push(
            i as u64,
            OnOffSignals {
                on: conv(on, i),
                off: conv(off, i),
            },
        )
        .unwrap();
    }
    ring
}

/// HR: `I(z + offset, t − τ) · I(z, t)`.
pub fn hr_oracle(s: &Stack, tau: usize, offset: [i64; 2]) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..s.h as i64 {
        for c in 0..s.w as i64 {
            out.push(s.at(tau, r + offset[1], c + offset[0]) * s.at(0, r, c));
        }
    }
    out
}

/// BL: `I(z, t) / (I(z + offset, t − τ) + ε)`.
pub fn bl_oracle(s: &Stack, tau: usize, offset: [i64; 2], eps: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..s.h as i64 {
        for c in 0..s.w as i64 {
            out.push(s.at(0, r, c) / (s.at(tau, r + offset[1], c + offset[0]) + eps));
        }
    }
    out
}

/// HR/BL: `I(z′, t − τ₁) · I(z, t) / (I(z″, t − τ₂) + ε)`.
pub fn hrbl_oracle(s: &Stack, tau1: usize, off1: [i64; 2], tau2: usize, off2: [i64; 2], eps: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..s.h as i64 {
        for c in 0..s.w as i64 {
            let num = s.at(tau1, r + off1[1], c + off1[0]) * s.at(0, r, c);
            out.push(num / (s.at(tau2, r + off2[1], c + off2[0]) + eps));
        }
    }
    out
}

/// ESTMD: `ON(z, t) · OFF(z, t − τ)`.
pub fn estmd_oracle(on: &Stack, off: &Stack, tau: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..on.h as i64 {
        for c in 0..on.w as i64 {
            out.push(on.at(0, r, c) * off.at(tau, r, c));
        }
    }
    out
}

/// DSTMD for one direction θ: `ON(z,t)·OFF(z′,t−τ₃)·[ON(z,t−τ₁) + OFF(z′,t−τ)]`.
pub fn dstmd_oracle(on: &Stack, off: &Stack, theta: f64, alpha: f64, tau1: usize, tau3: usize, tau: usize) -> Vec<f64> {
    let dx = (alpha * theta.cos()).round() as i64;
    let dy = (alpha * theta.sin()).round() as i64;
    let mut out = Vec::new();
    for r in 0..on.h as i64 {
        for c in 0..on.w as i64 {
            let a = on.at(0, r, c) * off.at(tau3, r + dy, c + dx);
            out.push(a * (on.at(tau1, r, c) + off.at(tau, r + dy, c + dx)));
        }
    }
    out
}

/// Direct 2-D convolution with a separable kernel's outer product and
/// replicated borders.
pub fn conv2d_replicate(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let k = taps[(dy + r) as usize] * taps[(dx + r) as usize];
                    acc += k * img[clamp(y + dy, h) * w + clamp(x + dx, w)];
                }
            }
            out[(y as usize) * w + x as usize] = acc;
        }
    }
    out
}

/// Normalized Gaussian taps by direct evaluation.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let raw: Vec<f64> = (-(radius as i64)..=radius as i64)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Binomial-series weights `(−1)^k · C(α, k)` via the generalized binomial
/// coefficient product.
pub fn gl_weights_binomial(alpha: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| {
            let mut c = 1.0;
            for j in 0..k {
                c *= (alpha - j as f64) / (j + 1) as f64;
            }
            if k % 2 == 0 {
                c
            } else {
                -c
            }
        })
        .collect()
}

/// Brute-force area under a recall–FPPI polyline: recall is zero left of the
/// first point, linear between points and flat after the last one. The
/// function is sampled at every breakpoint inside `[0, fppi_max]`.
pub fn auc_oracle(points: &[(f64, f64)], fppi_max: f64) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
    let value_right_of = |x: f64| -> f64 {
        // Right-continuous evaluation.
        if x < pts[0].0 {
            return 0.0;
        }
        let last = pts[pts.len() - 1];
        if x >= last.0 {
            return last.1;
        }
        let mut best = 0.0;
        for i in 0..pts.len() - 1 {
            let (a, b) = (pts[i], pts[i + 1]);
            if a.0 <= x && x < b.0 {
                best = a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0);
            }
        }
        best
    };
    let value_left_of = |x: f64| -> f64 {
        if x <= pts[0].0 {
            return 0.0;
        }
        let last = pts[pts.len() - 1];
        if x > last.0 {
            return last.1;
        }
        let mut best = 0.0;
        for i in 0..pts.len() - 1 {
            let (a, b) = (pts[i], pts[i + 1]);
            if a.0 < x && x <= b.0 {
                best = a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0);
            }
        }
        best
    };
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).filter(|&x| x < fppi_max).collect();
    xs.push(0.0);
    xs.push(fppi_max);
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    let mut area = 0.0;
    for w in xs.windows(2) {
        area += 0.5 * (value_right_of(w[0]) + value_left_of(w[1])) * (w[1] - w[0]);
    }
    area / fppi_max
}

/// Running precision/recall step sum over detections sorted by score.
pub fn ap_oracle(scored: &[(f64, bool)], truths: usize) -> f64 {
    let mut v = scored.to_vec();
    v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut precisions = Vec::new();
    let mut recalls = vec![0.0];
    let mut tp = 0.0;
    for (i, (_, hit)) in v.iter().enumerate() {
        if *hit {
            tp += 1.0;
        }
        precisions.push(tp / (i + 1) as f64);
        recalls.push(tp / truths as f64);
    }
    (0..precisions.len())
        .map(|i| (recalls[i + 1] - recalls[i]) * precisions[i])
        .sum()
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(a.abs()) || (a - b).abs() <= 1e-30
}
