//! Frequency-domain helpers: the low/high band split used by
//! frequency-aware guidance, a small FFT, and radially binned power
//! spectra of latents.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{resample_bilinear, resample_bilinear_to, LatentGrid, Resolution};
use crate::math;
use crate::schedule::{NoiseSchedule, ScheduleKind, Timestep};

/// `side / 2`.
pub fn nyquist(res: Resolution) -> f64 {
    res.nyquist()
}

/// A grid split into a part representable at `base` and the residual.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSplit {
    pub low: LatentGrid,
    pub high: LatentGrid,
    pub base: Resolution,
}

/// `low = up(down(g, base))`, `high = g - low`, both bilinear.
///
/// The partition is exact by construction: `low + high` differs from `g`
/// only by the rounding of one subtraction and one addition.
pub fn band_split(g: &LatentGrid, base: Resolution) -> Result<BandSplit> {
    let current = g.resolution()?;
    if base > current {
        return Err(Error::invalid(alloc::format!(
            "band cut {base} exceeds grid resolution {current}"
        )));
    }
    let low = resample_bilinear_to(&resample_bilinear(g, base), g.height(), g.width());
    let high = g.sub(&low)?;
    Ok(BandSplit { low, high, base })
}

// ---------------------------------------------------------------------------
// FFT

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    #[inline]
    fn mul(self, o: Complex) -> Complex {
        Complex {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }

    #[inline]
    fn norm_sq(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// Forward DFT in place (`X_k = sum_n x_n e^{-2 pi i k n / N}`).
///
/// Iterative radix-2 for power-of-two lengths, direct summation otherwise.
fn dft_in_place(buf: &mut [Complex], scratch: &mut Vec<Complex>) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let ang = -2.0 * core::f64::consts::PI / len as f64;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let w = Complex {
                        re: math::cos(ang * k as f64),
                        im: math::sin(ang * k as f64),
                    };
                    let a = buf[start + k];
                    let b = buf[start + k + len / 2].mul(w);
                    buf[start + k] = Complex {
                        re: a.re + b.re,
                        im: a.im + b.im,
                    };
                    buf[start + k + len / 2] = Complex {
                        re: a.re - b.re,
                        im: a.im - b.im,
                    };
                }
            }
            len <<= 1;
        }
    } else {
        scratch.clear();
        scratch.extend_from_slice(buf);
        for (k, out) in buf.iter_mut().enumerate() {
            let mut acc = Complex::default();
            for (j, x) in scratch.iter().enumerate() {
                // Reduce k*j mod n first to keep the angle small.
                let ang = -2.0 * core::f64::consts::PI * ((k * j) % n) as f64 / n as f64;
                acc.re += x.re * math::cos(ang) - x.im * math::sin(ang);
                acc.im += x.re * math::sin(ang) + x.im * math::cos(ang);
            }
            *out = acc;
        }
    }
}

/// Per-mode power `|X(ky, kx)|^2 / (h w)` of every channel, row-major.
///
/// With this normalization the mean over modes equals the mean square of
/// the plane, and unit white noise has expected power 1 in every mode.
pub fn mode_power(g: &LatentGrid) -> Vec<Vec<f64>> {
    let (h, w) = (g.height(), g.width());
    let mut scratch = Vec::new();
    let mut col = vec![Complex::default(); h];
    (0..g.channels())
        .map(|c| {
            let mut plane: Vec<Complex> = g
                .channel(c)
                .iter()
                .map(|&re| Complex { re, im: 0.0 })
                .collect();
            for row in plane.chunks_mut(w) {
                dft_in_place(row, &mut scratch);
            }
            for x in 0..w {
                for y in 0..h {
                    col[y] = plane[y * w + x];
                }
                dft_in_place(&mut col, &mut scratch);
                for y in 0..h {
                    plane[y * w + x] = col[y];
                }
            }
            let norm = (h * w) as f64;
            plane.iter().map(|z| z.norm_sq() / norm).collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Radial PSD

/// Radially binned power spectrum, averaged over channels.
///
/// Point `i` sits at radial frequency `i * nyquist / n_bins` and holds the
/// mean power of all DFT modes whose radius rounds to it; `counts[i]` is
/// the number of such modes. Modes beyond the Nyquist ring (the corners of
/// the square spectrum) are not binned.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdCurve {
    pub resolution: Resolution,
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub counts: Vec<usize>,
}

impl PsdCurve {
    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    /// Energy carried by bins `range`: `sum counts[i] * power[i]`.
    pub fn band_energy(&self, range: core::ops::Range<usize>) -> f64 {
        range.map(|i| self.counts[i] as f64 * self.power[i]).sum()
    }

    pub fn total_energy(&self) -> f64 {
        self.band_energy(0..self.len())
    }

    /// Number of bins in the lowest (or highest) `fraction` of the axis,
    /// at least one.
    pub fn band_bins(&self, fraction: f64) -> usize {
        (math::floor(fraction * self.len() as f64) as usize).clamp(1, self.len())
    }

    /// Share of energy in the lowest `fraction` of bins; 0 when the curve
    /// carries no energy.
    pub fn low_band_fraction(&self, fraction: f64) -> f64 {
        let total = self.total_energy();
        if total <= 0.0 {
            return 0.0;
        }
        self.band_energy(0..self.band_bins(fraction)) / total
    }

    /// Share of energy in the highest `fraction` of bins.
    pub fn high_band_fraction(&self, fraction: f64) -> f64 {
        let total = self.total_energy();
        if total <= 0.0 {
            return 0.0;
        }
        let n = self.len();
        self.band_energy(n - self.band_bins(fraction)..n) / total
    }

    fn same_axis(&self, other: &PsdCurve) -> Result<()> {
        if self.resolution != other.resolution || self.len() != other.len() {
            return Err(Error::invalid("PSD curves have different axes"));
        }
        Ok(())
    }

    /// Elementwise arithmetic mean of curves sharing an axis.
    pub fn mean(curves: &[PsdCurve]) -> Result<PsdCurve> {
        let first = curves
            .first()
            .ok_or_else(|| Error::invalid("cannot average zero curves"))?;
        let mut power = vec![0.0; first.len()];
        for c in curves {
            first.same_axis(c)?;
            for (acc, p) in power.iter_mut().zip(&c.power) {
                *acc += p;
            }
        }
        let n = curves.len() as f64;
        power.iter_mut().for_each(|p| *p /= n);
        Ok(PsdCurve {
            power,
            ..first.clone()
        })
    }

    /// `max(self - other, 0)` per bin.
    pub fn clamped_difference(&self, other: &PsdCurve) -> Result<PsdCurve> {
        self.same_axis(other)?;
        Ok(PsdCurve {
            power: self
                .power
                .iter()
                .zip(&other.power)
                .map(|(a, b)| (a - b).max(0.0))
                .collect(),
            ..self.clone()
        })
    }

    /// Euclidean distance between the power columns.
    pub fn l2_distance(&self, other: &PsdCurve) -> Result<f64> {
        self.same_axis(other)?;
        Ok(math::sqrt(
            self.power
                .iter()
                .zip(&other.power)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        ))
    }
}

/// Radial PSD of a square grid with `n_bins` unit steps between DC and
/// Nyquist (so `n_bins + 1` points). `n_bins = side / 2` gives unit-width
/// integer-radius bins.
pub fn radial_psd(g: &LatentGrid, n_bins: usize) -> Result<PsdCurve> {
    let res = g.resolution()?;
    let side = res.side();
    let nyq = res.nyquist();
    if n_bins == 0 || n_bins as f64 > nyq {
        return Err(Error::invalid(alloc::format!(
            "n_bins must be in 1..={} for side {side}",
            nyq as usize
        )));
    }
    let width = nyq / n_bins as f64;
    // Bin index per mode, shared by all channels.
    let wrap = |k: usize| -> f64 {
        if 2 * k < side {
            k as f64
        } else {
            k as f64 - side as f64
        }
    };
    let bin_of: Vec<Option<usize>> = (0..side * side)
        .map(|i| {
            let (ky, kx) = (wrap(i / side), wrap(i % side));
            let r = math::sqrt(kx * kx + ky * ky);
            let b = math::round(r / width) as usize;
            (b <= n_bins).then_some(b)
        })
        .collect();
    let mut counts = vec![0usize; n_bins + 1];
    for b in bin_of.iter().flatten() {
        counts[*b] += 1;
    }
    let mut power = vec![0.0; n_bins + 1];
    let channels = mode_power(g);
    for modes in &channels {
        for (p, b) in modes.iter().zip(&bin_of) {
            if let Some(b) = b {
                power[*b] += p;
            }
        }
    }
    let nc = channels.len() as f64;
    for (p, &n) in power.iter_mut().zip(&counts) {
        *p = if n == 0 { 0.0 } else { *p / (n as f64 * nc) };
    }
    Ok(PsdCurve {
        resolution: res,
        freqs: (0..=n_bins).map(|i| i as f64 * width).collect(),
        power,
        counts,
    })
}

/// Total, noise and signal spectra of a forward-diffused latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Curves {
    pub total: PsdCurve,
    pub noise: PsdCurve,
    pub signal: PsdCurve,
}

impl Fig1Curves {
    /// Averages total and noise curves over samples and derives the signal
    /// curve from the averages.
    pub fn mean(samples: &[Fig1Curves]) -> Result<Fig1Curves> {
        let total: Vec<PsdCurve> = samples.iter().map(|s| s.total.clone()).collect();
        let noise: Vec<PsdCurve> = samples.iter().map(|s| s.noise.clone()).collect();
        let total = PsdCurve::mean(&total)?;
        let noise = PsdCurve::mean(&noise)?;
        let signal = total.clamped_difference(&noise)?;
        Ok(Fig1Curves {
            total,
            noise,
            signal,
        })
    }
}

/// PSD of `diffuse(z0, t, noise)`, of the injected noise
/// `sqrt(1 - alpha_t) noise`, and their clamped difference.
pub fn fig1_curves(
    z0: &LatentGrid,
    noise: &LatentGrid,
    t: Timestep,
    sched: &NoiseSchedule,
    n_bins: usize,
) -> Result<Fig1Curves> {
    if sched.kind() != ScheduleKind::VariancePreserving {
        return Err(Error::domain(
            "PSD curves need a variance-preserving schedule",
        ));
    }
    z0.check_same_shape(noise)?;
    let zt = sched.diffuse(z0, t, noise)?;
    let (_, sigma) = sched.coefficients(t)?;
    let total = radial_psd(&zt, n_bins)?;
    let noise = radial_psd(&noise.scale(sigma), n_bins)?;
    let signal = total.clamped_difference(&noise)?;
    Ok(Fig1Curves {
        total,
        noise,
        signal,
    })
}
