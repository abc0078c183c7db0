//! Dense channel-major grids, seeded noise and bilinear resampling.

use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::math;

/// Samples per side of a square grid, i.e. its sampling frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "usize", into = "usize"))]
pub struct Resolution(usize);

impl Resolution {
    pub fn new(side: usize) -> Result<Self> {
        if side < 2 {
            return Err(Error::invalid(alloc::format!(
                "resolution side must be >= 2, got {side}"
            )));
        }
        Ok(Self(side))
    }

    #[inline]
    pub fn side(self) -> usize {
        self.0
    }

    /// Highest representable frequency, `side / 2`.
    #[inline]
    pub fn nyquist(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

impl TryFrom<usize> for Resolution {
    type Error = Error;

    fn try_from(side: usize) -> Result<Self> {
        Self::new(side)
    }
}

impl From<Resolution> for usize {
    fn from(r: Resolution) -> usize {
        r.0
    }
}

impl core::fmt::Display for Resolution {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A `channels x height x width` field of reals stored channel-major,
/// row-major within a channel.
///
/// Grids are values: every operation returns a new grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl LatentGrid {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::invalid(alloc::format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid values must be finite"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        assert!(channels > 0 && height > 0 && width > 0);
        Self {
            channels,
            height,
            width,
            data: alloc::vec![value; channels * height * width],
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    /// Builds a grid from `f(channel, y, x)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(channels > 0 && height > 0 && width > 0);
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
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
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// The resolution of a square grid.
    pub fn resolution(&self) -> Result<Resolution> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                height: self.height,
                width: self.width,
            });
        }
        Resolution::new(self.height)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &LatentGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &LatentGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &LatentGrid) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &LatentGrid) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &LatentGrid, b: f64) -> Result<Self> {
        self.zip_with(other, |x, y| a * x + b * y)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &LatentGrid) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

/// I.i.d. standard normal samples, a pure function of `(seed, shape)`.
///
/// The stream is ChaCha20 seeded through `SeedableRng::seed_from_u64`;
/// pairs of 53-bit uniforms `u1 in (0, 1]`, `u2 in [0, 1)` are mapped with
/// Box-Muller to `sqrt(-2 ln u1) * (cos 2pi u2, sin 2pi u2)`, filling the
/// buffer in order. All math goes through `libm`, so the output is
/// bit-identical across platforms.
pub fn seeded_gaussian(shape: (usize, usize, usize), seed: u64) -> LatentGrid {
    let (channels, height, width) = shape;
    assert!(channels > 0 && height > 0 && width > 0);
    let n = channels * height * width;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n + 1);
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    while data.len() < n {
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * SCALE;
        let u2 = (rng.next_u64() >> 11) as f64 * SCALE;
        let r = math::sqrt(-2.0 * math::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        data.push(r * math::cos(theta));
        data.push(r * math::sin(theta));
    }
    data.truncate(n);
    LatentGrid {
        channels,
        height,
        width,
        data,
    }
}

/// Per-channel bilinear resampling to a `target x target` grid.
///
/// Sample positions are corner aligned: output index `i` reads source
/// coordinate `i * (src - 1) / (dst - 1)`, so the first and last samples
/// of every row and column coincide with the source endpoints.
pub fn resample_bilinear(g: &LatentGrid, target: Resolution) -> LatentGrid {
    resample_bilinear_to(g, target.side(), target.side())
}

/// Rectangular variant of [`resample_bilinear`].
pub fn resample_bilinear_to(g: &LatentGrid, height: usize, width: usize) -> LatentGrid {
    assert!(height > 0 && width > 0);
    if g.height == height && g.width == width {
        return g.clone();
    }
    let ys = axis_taps(g.height, height);
    let xs = axis_taps(g.width, width);
    let mut data = Vec::with_capacity(g.channels * height * width);
    for c in 0..g.channels {
        let plane = g.channel(c);
        for &(y0, y1, fy) in &ys {
            let row0 = &plane[y0 * g.width..(y0 + 1) * g.width];
            let row1 = &plane[y1 * g.width..(y1 + 1) * g.width];
            for &(x0, x1, fx) in &xs {
                let top = row0[x0] + fx * (row0[x1] - row0[x0]);
                let bottom = row1[x0] + fx * (row1[x1] - row1[x0]);
                data.push(top + fy * (bottom - top));
            }
        }
    }
    LatentGrid {
        channels: g.channels,
        height,
        width,
        data,
    }
}

/// `(lo, hi, frac)` taps for every output index of one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            // Exact rational position i*(src-1)/(dst-1).
            let num = i * (src - 1);
            let den = dst - 1;
            let lo = num / den;
            let rem = num % den;
            if rem == 0 || lo + 1 >= src {
                (lo.min(src - 1), lo.min(src - 1), 0.0)
            } else {
                (lo, lo + 1, rem as f64 / den as f64)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_rejects_tiny_sides() {
        assert!(Resolution::new(1).is_err());
        assert_eq!(Resolution::new(64).unwrap().nyquist(), 32.0);
        assert_eq!(Resolution::new(2).unwrap().nyquist(), 1.0);
    }

    #[test]
    fn new_validates_length_and_finiteness() {
        assert!(LatentGrid::new(1, 2, 2, alloc::vec![0.0; 3]).is_err());
        assert!(LatentGrid::new(1, 1, 1, alloc::vec![f64::NAN]).is_err());
        assert!(LatentGrid::new(0, 1, 1, alloc::vec![]).is_err());
    }

    #[test]
    fn gaussian_is_deterministic_and_seed_sensitive() {
        let a = seeded_gaussian((4, 8, 8), 7);
        let b = seeded_gaussian((4, 8, 8), 7);
        let c = seeded_gaussian((4, 8, 8), 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // Odd lengths drop the spare Box-Muller sample.
        assert_eq!(seeded_gaussian((1, 3, 3), 1).len(), 9);
    }

    #[test]
    fn two_by_two_ramp_upsamples_to_thirds() {
        let g = LatentGrid::new(1, 2, 2, alloc::vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let up = resample_bilinear(&g, Resolution::new(4).unwrap());
        for y in 0..4 {
            let row: Vec<f64> = (0..4).map(|x| up.at(0, y, x)).collect();
            let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
            for (a, b) in row.iter().zip(expect) {
                assert!((a - b).abs() < 1e-15, "{row:?}");
            }
        }
    }

    #[test]
    fn constants_survive_resampling() {
        let g = LatentGrid::filled(2, 7, 7, 3.0);
        for side in [2, 3, 5, 16, 33] {
            let r = resample_bilinear(&g, Resolution::new(side).unwrap());
            assert!(r.data().iter().all(|&v| v == 3.0));
        }
    }

    #[test]
    fn identity_target_is_a_copy() {
        let g = seeded_gaussian((3, 9, 9), 1);
        assert_eq!(resample_bilinear(&g, Resolution::new(9).unwrap()), g);
    }

    #[test]
    fn endpoints_map_to_endpoints() {
        let g = seeded_gaussian((1, 10, 10), 3);
        let r = resample_bilinear(&g, Resolution::new(4).unwrap());
        assert_eq!(r.at(0, 0, 0), g.at(0, 0, 0));
        assert_eq!(r.at(0, 3, 3), g.at(0, 9, 9));
        assert_eq!(r.at(0, 0, 3), g.at(0, 0, 9));
    }

    #[test]
    fn arithmetic_checks_shapes() {
        let a = LatentGrid::zeros(1, 2, 2);
        let b = LatentGrid::zeros(1, 2, 3);
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch { .. })));
    }
}
