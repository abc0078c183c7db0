//! Latent codecs standing in for a VAE: the identity and an orthonormal
//! one-level Haar transform. Both are exact bijections.

use alloc::vec;

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LatentCodec {
    Identity,
    /// 2x2 pixel blocks become `(LL, LH, HL, HH)` at half resolution, so an
    /// image with `c` channels maps to a latent with `4c` channels.
    #[default]
    Haar1,
}

impl LatentCodec {
    /// Image side per latent side.
    pub fn spatial_factor(self) -> usize {
        match self {
            LatentCodec::Identity => 1,
            LatentCodec::Haar1 => 2,
        }
    }

    /// Latent channels per image channel.
    pub fn channel_factor(self) -> usize {
        match self {
            LatentCodec::Identity => 1,
            LatentCodec::Haar1 => 4,
        }
    }

    /// Image to latent.
    ///
    /// For Haar, a block `a b / c d` maps to
    /// `((a+b+c+d), (a-b+c-d), (a+b-c-d), (a-b-c+d)) / 2`, stored as
    /// channels `4k..4k+4` for image channel `k`.
    pub fn encode(self, image: &LatentGrid) -> Result<LatentGrid> {
        match self {
            LatentCodec::Identity => Ok(image.clone()),
            LatentCodec::Haar1 => {
                let (c, h, w) = image.shape();
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::invalid(alloc::format!(
                        "Haar codec needs even dimensions, got {h}x{w}"
                    )));
                }
                let (hh, hw) = (h / 2, w / 2);
                let plane = hh * hw;
                let mut out = vec![0.0; 4 * c * plane];
                for k in 0..c {
                    for y in 0..hh {
                        for x in 0..hw {
                            let a = image.at(k, 2 * y, 2 * x);
                            let b = image.at(k, 2 * y, 2 * x + 1);
                            let cc = image.at(k, 2 * y + 1, 2 * x);
                            let d = image.at(k, 2 * y + 1, 2 * x + 1);
                            let i = y * hw + x;
                            out[(4 * k) * plane + i] = 0.5 * (a + b + cc + d);
                            out[(4 * k + 1) * plane + i] = 0.5 * (a - b + cc - d);
                            out[(4 * k + 2) * plane + i] = 0.5 * (a + b - cc - d);
                            out[(4 * k + 3) * plane + i] = 0.5 * (a - b - cc + d);
                        }
                    }
                }
                LatentGrid::new(4 * c, hh, hw, out)
            }
        }
    }

    /// Latent to image; exact inverse of [`encode`](Self::encode).
    pub fn decode(self, latent: &LatentGrid) -> Result<LatentGrid> {
        match self {
            LatentCodec::Identity => Ok(latent.clone()),
            LatentCodec::Haar1 => {
                let (lc, hh, hw) = latent.shape();
                if lc % 4 != 0 {
                    return Err(Error::invalid(alloc::format!(
                        "Haar codec needs a multiple of 4 latent channels, got {lc}"
                    )));
                }
                let c = lc / 4;
                let (h, w) = (2 * hh, 2 * hw);
                let mut out = vec![0.0; c * h * w];
                for k in 0..c {
                    for y in 0..hh {
                        for x in 0..hw {
                            let ll = latent.at(4 * k, y, x);
                            let lh = latent.at(4 * k + 1, y, x);
                            let hl = latent.at(4 * k + 2, y, x);
                            let hhv = latent.at(4 * k + 3, y, x);
                            let base = k * h * w;
                            out[base + (2 * y) * w + 2 * x] = 0.5 * (ll + lh + hl + hhv);
                            out[base + (2 * y) * w + 2 * x + 1] = 0.5 * (ll - lh + hl - hhv);
                            out[base + (2 * y + 1) * w + 2 * x] = 0.5 * (ll + lh - hl - hhv);
                            out[base + (2 * y + 1) * w + 2 * x + 1] = 0.5 * (ll - lh - hl + hhv);
                        }
                    }
                }
                LatentGrid::new(c, h, w, out)
            }
        }
    }
}
