//! Numeric containers shared by every stage: scalar grids, bounded frame
//! histories, separable convolution and ON/OFF rectification.
//!
//! Grids are row-major. Pipelines run in `f32`; the same operations are
//! available in `f64` so that reference computations can be checked tightly.

use std::collections::VecDeque;
use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Result, StmdError};

/// Floating-point element type a [`Grid2D`] can hold.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static {
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::zero)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(0.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// H×W scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D<T = f32> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> Grid2D<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// Builds a grid from row-major values, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != height * width {
            return Err(StmdError::Length {
                height,
                width,
                expected: height * width,
                actual: values.len(),
            });
        }
        if let Some((index, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(StmdError::NonFinite {
                index,
                value: v.as_f64(),
            });
        }
        Ok(Self { height, width, values })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                values.push(f(row, col));
            }
        }
        Self { height, width, values }
    }

    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { height, width, values }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    /// Value at a signed position; anything outside the grid reads as zero.
    #[inline]
    pub fn get_or_zero(&self, row: isize, col: isize) -> T {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            T::zero()
        } else {
            self.values[row as usize * self.width + col as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        debug_assert!(value.is_finite());
        self.values[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.height, self.width, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Element-wise combination of two equally shaped grids.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_shape(other)?;
        Ok(Self::from_raw(
            self.height,
            self.width,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn check_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(StmdError::Shape {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    /// Sum of all values with a 64-bit accumulator.
    pub fn sum(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max_value(&self) -> T {
        self.values
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a })
    }

    /// Row-major position of the largest value; the first one wins ties.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, T)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| (i / self.width, i % self.width))
    }

    pub fn cast<U: Scalar>(&self) -> Grid2D<U> {
        Grid2D::from_raw(
            self.height,
            self.width,
            self.values.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        )
    }
}

/// Odd-length 1D filter kernel centered on its middle tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel1D {
    radius: usize,
    taps: Vec<f64>,
}

impl Kernel1D {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len().is_multiple_of(2) {
            return Err(StmdError::param("taps", format!("length {} is not odd", taps.len())));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(StmdError::param("taps", "non-finite tap"));
        }
        Ok(Self {
            radius: taps.len() / 2,
            taps,
        })
    }

    /// The identity kernel `[1]`.
    pub fn delta() -> Self {
        Self {
            radius: 0,
            taps: vec![1.0],
        }
    }

    /// Normalized box of `2·radius+1` equal taps.
    pub fn box_filter(radius: usize) -> Self {
        let n = 2 * radius + 1;
        Self {
            radius,
            taps: vec![1.0 / n as f64; n],
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// Sampled Gaussian `exp(-i²/2σ²)` on `[-radius, radius]`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Kernel1D> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(StmdError::param("sigma", format!("must be positive, got {sigma}")));
    }
    if radius == 0 {
        return Err(StmdError::param("radius", "must be at least 1"));
    }
    let r = radius as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(Kernel1D { radius, taps })
}

/// Gaussian with radius `ceil(3σ)`; `σ = 0` gives the identity kernel.
pub fn gaussian_kernel_auto(sigma: f64) -> Result<Kernel1D> {
    if sigma == 0.0 {
        return Ok(Kernel1D::delta());
    }
    gaussian_kernel(sigma, ((3.0 * sigma).ceil() as usize).max(1))
}

/// Separable convolution with edge replication at the borders.
pub fn convolve_separable<T: Scalar>(grid: &Grid2D<T>, kx: &Kernel1D, ky: &Kernel1D) -> Result<Grid2D<T>> {
    let (h, w) = grid.shape();
    if kx.len() > w {
        return Err(StmdError::Sizing {
            taps: kx.len(),
            dimension: w,
        });
    }
    if ky.len() > h {
        return Err(StmdError::Sizing {
            taps: ky.len(),
            dimension: h,
        });
    }
    let horizontal = convolve_rows(grid, kx);
    Ok(convolve_cols(&horizontal, ky))
}

fn convolve_rows<T: Scalar>(grid: &Grid2D<T>, k: &Kernel1D) -> Grid2D<T> {
    let (h, w) = grid.shape();
    if k.radius == 0 {
        let t = T::from_f64_lossy(k.taps[0]);
        return grid.map(|v| v * t);
    }
    let r = k.radius;
    let taps: Vec<T> = k.taps.iter().map(|&t| T::from_f64_lossy(t)).collect();
    let mut out = vec![T::zero(); h * w];
    let mut padded = vec![T::zero(); w + 2 * r];
    for row in 0..h {
        let src = &grid.values[row * w..(row + 1) * w];
        padded[..r].fill(src[0]);
        padded[r..r + w].copy_from_slice(src);
        padded[r + w..].fill(src[w - 1]);
        let dst = &mut out[row * w..(row + 1) * w];
        for (j, &t) in taps.iter().enumerate() {
            for (d, &s) in dst.iter_mut().zip(&padded[j..j + w]) {
                *d = *d + t * s;
            }
        }
    }
    Grid2D::from_raw(h, w, out)
}

fn convolve_cols<T: Scalar>(grid: &Grid2D<T>, k: &Kernel1D) -> Grid2D<T> {
    let (h, w) = grid.shape();
    if k.radius == 0 {
        let t = T::from_f64_lossy(k.taps[0]);
        return grid.map(|v| v * t);
    }
    let r = k.radius as isize;
    let taps: Vec<T> = k.taps.iter().map(|&t| T::from_f64_lossy(t)).collect();
    let mut out = vec![T::zero(); h * w];
    for row in 0..h {
        let dst = &mut out[row * w..(row + 1) * w];
        for (j, &t) in taps.iter().enumerate() {
            let src_row = (row as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
            let src = &grid.values[src_row * w..(src_row + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + t * s;
            }
        }
    }
    Grid2D::from_raw(h, w, out)
}

/// Half-wave rectified brightness-increase (ON) and brightness-decrease
/// (OFF) channels. Both are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct OnOffSignals<T = f32> {
    pub on: Grid2D<T>,
    pub off: Grid2D<T>,
}

impl<T: Scalar> OnOffSignals<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            on: Grid2D::zeros(height, width),
            off: Grid2D::zeros(height, width),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.on.shape()
    }

    /// The two channels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            on: self.off.clone(),
            off: self.on.clone(),
        }
    }
}

/// ON = max(x, 0), OFF = max(−x, 0).
pub fn rectify_pair<T: Scalar>(grid: &Grid2D<T>) -> OnOffSignals<T> {
    let zero = T::zero();
    OnOffSignals {
        on: grid.map(|v| if v > zero { v } else { zero }),
        off: grid.map(|v| if v < zero { -v } else { zero }),
    }
}

/// Bounded history of indexed frames, newest last.
#[derive(Debug, Clone)]
pub struct FrameRing<F = Grid2D> {
    capacity: usize,
    entries: VecDeque<(u64, F)>,
}

impl<F> FrameRing<F> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "frame ring capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of frames currently stored.
    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    pub fn latest_index(&self) -> Option<u64> {
        self.entries.back().map(|(i, _)| *i)
    }

    /// Appends a frame, evicting the oldest one when full. Indices must
    /// strictly increase.
    pub fn push(&mut self, index: u64, frame: F) -> Result<()> {
        if let Some(last) = self.latest_index() {
            if index <= last {
                return Err(StmdError::Ordering { last, got: index });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((index, frame));
        Ok(())
    }

    /// The frame pushed `delay` steps before the newest one.
    pub fn delayed(&self, delay: usize) -> Result<&F> {
        let depth = self.entries.len();
        if delay >= depth {
            return Err(StmdError::WarmUp { delay, depth });
        }
        Ok(&self.entries[depth - 1 - delay].1)
    }

    pub fn delayed_entry(&self, delay: usize) -> Result<(u64, &F)> {
        let depth = self.entries.len();
        if delay >= depth {
            return Err(StmdError::WarmUp { delay, depth });
        }
        let (i, f) = &self.entries[depth - 1 - delay];
        Ok((*i, f))
    }

    pub fn indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|(i, _)| *i)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_grid(h: usize, w: usize, seed: u64) -> Grid2D<f64> {
        let mut s = seed;
        Grid2D::from_fn(h, w, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(matches!(
            Grid2D::<f32>::from_vec(2, 2, vec![0.0; 3]),
            Err(StmdError::Length { .. })
        ));
        assert!(matches!(
            Grid2D::<f32>::from_vec(1, 2, vec![0.0, f32::NAN]),
            Err(StmdError::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn zero_grid_stays_zero() {
        let g = Grid2D::<f64>::zeros(5, 6);
        let k = gaussian_kernel(1.3, 2).unwrap();
        let out = convolve_separable(&g, &k, &k).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let g = lcg_grid(5, 7, 3);
        let out = convolve_separable(&g, &Kernel1D::delta(), &Kernel1D::delta()).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn constant_field_preserved_by_box() {
        let g = Grid2D::<f64>::filled(5, 5, 1.0);
        let k = Kernel1D::box_filter(1);
        let out = convolve_separable(&g, &k, &k).unwrap();
        for &v in out.as_slice() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        let g = Grid2D::<f32>::zeros(3, 10);
        let k = Kernel1D::box_filter(2);
        assert!(matches!(
            convolve_separable(&g, &Kernel1D::delta(), &k),
            Err(StmdError::Sizing { taps: 5, dimension: 3 })
        ));
        assert!(convolve_separable(&g, &k, &Kernel1D::delta()).is_ok());
    }

    #[test]
    fn gaussian_flat_limit() {
        let k = gaussian_kernel(1e6, 1).unwrap();
        for &t in k.taps() {
            assert!((t - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_symmetric_and_normalized() {
        let k = gaussian_kernel(1.0, 2).unwrap();
        let t = k.taps();
        assert_eq!(t.len(), 5);
        assert_eq!(t[0], t[4]);
        assert_eq!(t[1], t[3]);
        assert!(t[2] > t[1] && t[1] > t[0]);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_matches_scalar_formula() {
        // Direct evaluation: exp(-i^2/2) / sum.
        let raw: Vec<f64> = [-2.0f64, -1.0, 0.0, 1.0, 2.0]
            .iter()
            .map(|i| (-i * i / 2.0).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        let k = gaussian_kernel(1.0, 2).unwrap();
        for (a, b) in k.taps().iter().zip(&raw) {
            assert!((a - b / total).abs() < 1e-15);
        }
        // Frozen values of the same formula.
        let frozen = [
            0.054_488_684_549_642_33,
            0.244_201_342_003_233_6,
            0.402_619_946_894_247_9,
        ];
        for (a, b) in k.taps()[..3].iter().zip(&frozen) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn gaussian_rejects_bad_sigma() {
        assert!(gaussian_kernel(0.0, 2).is_err());
        assert!(gaussian_kernel(-1.0, 2).is_err());
        assert!(gaussian_kernel(1.0, 0).is_err());
    }

    #[test]
    fn separable_equals_direct_2d() {
        let g = lcg_grid(8, 8, 17);
        let kx = gaussian_kernel(1.0, 2).unwrap();
        let ky = gaussian_kernel(0.7, 1).unwrap();
        let out = convolve_separable(&g, &kx, &ky).unwrap();
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        for r in 0..8 {
            for c in 0..8 {
                let mut acc = 0.0;
                for (j, ty) in ky.taps().iter().enumerate() {
                    for (i, tx) in kx.taps().iter().enumerate() {
                        let rr = clamp(r as isize + j as isize - 1, 8);
                        let cc = clamp(c as isize + i as isize - 2, 8);
                        acc += ty * tx * g.get(rr, cc);
                    }
                }
                assert!((out.get(r, c) - acc).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rectify_examples() {
        let g = Grid2D::from_vec(1, 3, vec![2.0f32, -3.0, 0.0]).unwrap();
        let s = rectify_pair(&g);
        assert_eq!(s.on.as_slice(), &[2.0, 0.0, 0.0]);
        assert_eq!(s.off.as_slice(), &[0.0, 3.0, 0.0]);
    }

    #[test]
    fn ring_push_and_evict() {
        let mut ring: FrameRing<u32> = FrameRing::new(2);
        ring.push(0, 10).unwrap();
        assert_eq!(ring.depth(), 1);
        ring.push(1, 11).unwrap();
        assert_eq!(*ring.delayed(1).unwrap(), 10);
        ring.push(2, 12).unwrap();
        assert_eq!(ring.indices().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(*ring.delayed(0).unwrap(), 12);
        assert!(matches!(ring.delayed(2), Err(StmdError::WarmUp { .. })));
        assert!(matches!(ring.push(2, 0), Err(StmdError::Ordering { last: 2, got: 2 })));
    }
}
