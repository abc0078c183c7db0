//! Procedural "natural-image-like" latents: multi-octave value noise plus
//! class-specific geometric shapes, giving a roughly power-law spectrum.

use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use super::LatentBank;
use crate::error::{Error, Result};
use crate::grid::{resample_bilinear, seeded_gaussian, LatentGrid, Resolution};
use crate::math;

/// Parameters of the procedural bank. Item `i` belongs to class
/// `i % classes` and is generated from `item_seed(seed, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProceduralSpec {
    pub seed: u64,
    pub items: usize,
    pub classes: usize,
    pub channels: usize,
    pub side: usize,
}

impl Default for ProceduralSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            items: 100,
            classes: 4,
            channels: 4,
            side: 64,
        }
    }
}

/// Seed of item `index`.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    math::splitmix64(seed ^ math::splitmix64(index as u64 + 1))
}

/// Uniform-weight bank of `spec.items` procedural latents.
pub fn procedural_bank(spec: &ProceduralSpec) -> Result<LatentBank> {
    if spec.items == 0 || spec.classes == 0 || spec.channels == 0 {
        return Err(Error::invalid(
            "procedural bank needs items, classes and channels",
        ));
    }
    let res = Resolution::new(spec.side)?;
    let latents = (0..spec.items)
        .map(|i| {
            let class = i % spec.classes;
            (
                procedural_item(item_seed(spec.seed, i), class, spec.channels, res),
                class as u32,
            )
        })
        .collect();
    LatentBank::uniform(latents)
}

/// White Gaussian latents; the spectral control for the procedural bank.
pub fn white_noise_bank(spec: &ProceduralSpec) -> Result<LatentBank> {
    if spec.items == 0 || spec.classes == 0 || spec.channels == 0 {
        return Err(Error::invalid("bank needs items, classes and channels"));
    }
    Resolution::new(spec.side)?;
    let latents = (0..spec.items)
        .map(|i| {
            let g = seeded_gaussian(
                (spec.channels, spec.side, spec.side),
                item_seed(spec.seed, i),
            );
            (g, (i % spec.classes) as u32)
        })
        .collect();
    LatentBank::uniform(latents)
}

struct Uniform(ChaCha20Rng);

impl Uniform {
    fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }
}

/// Value noise: random lattices of `2^o + 1` points per side, bilinearly
/// upsampled; octave `o` is weighted by `2^(-o/2)`.
fn value_noise(seed: u64, channels: usize, res: Resolution) -> LatentGrid {
    let side = res.side();
    let mut acc = LatentGrid::zeros(channels, side, side);
    let mut octave = 1u32;
    loop {
        let cells = 1usize << octave;
        if cells > side {
            break;
        }
        let lattice = seeded_gaussian((channels, cells + 1, cells + 1), seed ^ octave as u64);
        let layer = resample_bilinear(&lattice, res);
        let amp = math::powf(2.0, -(octave as f64) / 2.0);
        acc = acc.lincomb(1.0, &layer, amp).expect("same shape");
        octave += 1;
    }
    acc
}

/// Indicator-style shape mask of one class, values in `[0, 1]`.
fn shape_mask(class: usize, rng: &mut Uniform, side: usize) -> LatentGrid {
    let s = side as f64;
    let cx = rng.range(0.15, 0.85) * s;
    let cy = rng.range(0.15, 0.85) * s;
    let size = rng.range(0.08, 0.3) * s;
    let angle = rng.range(0.0, core::f64::consts::PI);
    let (ca, sa) = (math::cos(angle), math::sin(angle));
    LatentGrid::from_fn(1, side, side, |_, y, x| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        let inside = match class % 4 {
            // Discs.
            0 => dx * dx + dy * dy <= size * size,
            // Rotated squares.
            1 => {
                let u = ca * dx + sa * dy;
                let v = -sa * dx + ca * dy;
                u.abs() <= size && v.abs() <= size
            }
            // Bars through the centre.
            2 => (-sa * dx + ca * dy).abs() <= 0.25 * size,
            // Rings.
            _ => {
                let r = math::sqrt(dx * dx + dy * dy);
                (r - size).abs() <= 0.2 * size
            }
        };
        if inside {
            1.0
        } else {
            0.0
        }
    })
}

/// One bank latent, normalized to zero mean and unit variance.
pub fn procedural_item(seed: u64, class: usize, channels: usize, res: Resolution) -> LatentGrid {
    let side = res.side();
    let mut rng = Uniform(ChaCha20Rng::seed_from_u64(seed));
    let mut acc = value_noise(math::splitmix64(seed), channels, res);
    let shapes = 2 + (rng.0.next_u64() % 3) as usize;
    for _ in 0..shapes {
        let mask = shape_mask(class, &mut rng, side);
        let gains: Vec<f64> = (0..channels).map(|_| rng.range(-2.0, 2.0)).collect();
        let m = mask.channel(0);
        acc = LatentGrid::from_fn(channels, side, side, |c, y, x| {
            acc.at(c, y, x) + gains[c] * m[y * side + x]
        });
    }
    let mean = acc.mean();
    let var = acc
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / acc.len() as f64;
    let inv = 1.0 / math::sqrt(var.max(1e-300));
    acc.map(|v| (v - mean) * inv)
}
