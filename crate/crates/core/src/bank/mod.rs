//! The analytic denoiser.
//!
//! For data drawn from a finite bank `{x_k}` with prior weights `w_k`, the
//! minimum-MSE estimate of the clean latent given `z_t = s x + sigma eps` is
//! the posterior mean
//!
//! ```text
//! p_k ∝ w_k exp(-|z_t - s x_k|^2 / (2 sigma^2)),   z0_hat = sum_k p_k x_k
//! ```
//!
//! with `(s, sigma) = (sqrt(alpha_t), sqrt(1 - alpha_t))` for VP schedules and
//! `(1 - t, t)` for flow matching. The noise prediction is
//! `(z_t - s z0_hat) / sigma` and the flow velocity `(z_t - z0_hat) / t`.
//! Restricting the sum to one class gives the conditional prediction.
//!
//! Alongside each prediction the denoiser reports a cross-attention
//! stand-in: for every `p x p` patch, the posterior probability of each
//! class computed from patch-restricted distances over the whole bank.
//! When a reused map is supplied, the item weights inside each patch are
//! multiplied by `fused(patch, class) / current(patch, class)` and
//! renormalized, so the patch behaves as if its class responsibilities
//! were the fused ones. A patch whose fused map gives no mass to any
//! admissible class keeps its unweighted posterior.

mod camap;
pub mod procedural;

use alloc::vec;
use alloc::vec::Vec;

pub use camap::CAMap;

use crate::error::{Error, Result};
use crate::grid::{resample_bilinear, LatentGrid, Resolution};
use crate::math;
use crate::schedule::{NoiseSchedule, ScheduleKind, Timestep};

#[derive(Debug, Clone, PartialEq)]
pub struct BankItem {
    pub latent: LatentGrid,
    pub class_id: u32,
    pub weight: f64,
}

/// A finite set of square latents with class labels and prior weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBank {
    items: Vec<BankItem>,
    resolution: Resolution,
    classes: Vec<u32>,
}

/// Weights must sum to one within this tolerance.
const WEIGHT_SUM_TOL: f64 = 1e-9;

impl LatentBank {
    pub fn new(items: Vec<BankItem>) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("bank needs at least one item"))?;
        let shape = first.latent.shape();
        let resolution = first.latent.resolution()?;
        for it in &items {
            it.latent.check_same_shape(&first.latent)?;
            if !(it.weight > 0.0 && it.weight.is_finite()) {
                return Err(Error::invalid("bank weights must be positive"));
            }
        }
        let total: f64 = items.iter().map(|i| i.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(alloc::format!(
                "bank weights sum to {total}, expected 1"
            )));
        }
        let mut classes: Vec<u32> = items.iter().map(|i| i.class_id).collect();
        classes.sort_unstable();
        classes.dedup();
        debug_assert!(shape.0 > 0);
        Ok(Self {
            items,
            resolution,
            classes,
        })
    }

    /// Equal prior weights.
    pub fn uniform(latents: Vec<(LatentGrid, u32)>) -> Result<Self> {
        let w = 1.0 / latents.len().max(1) as f64;
        Self::new(
            latents
                .into_iter()
                .map(|(latent, class_id)| BankItem {
                    latent,
                    class_id,
                    weight: w,
                })
                .collect(),
        )
    }

    pub fn items(&self) -> &[BankItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.items[0].latent.channels()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.items[0].latent.shape()
    }

    /// Sorted distinct class ids.
    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    /// Every item bilinearly resampled to `target`; labels and weights kept.
    pub fn resample(&self, target: Resolution) -> LatentBank {
        if target == self.resolution {
            return self.clone();
        }
        Self {
            items: self
                .items
                .iter()
                .map(|it| BankItem {
                    latent: resample_bilinear(&it.latent, target),
                    ..it.clone()
                })
                .collect(),
            resolution: target,
            classes: self.classes.clone(),
        }
    }

    /// Weighted mean of all items, or of one class.
    pub fn mean_latent(&self, condition: Option<u32>) -> Result<LatentGrid> {
        let idx = self.admissible(condition)?;
        let total: f64 = idx.iter().map(|&k| self.items[k].weight).sum();
        let (c, h, w) = self.shape();
        let mut acc = vec![0.0; c * h * w];
        for &k in &idx {
            let p = self.items[k].weight / total;
            for (a, x) in acc.iter_mut().zip(self.items[k].latent.data()) {
                *a += p * x;
            }
        }
        LatentGrid::new(c, h, w, acc)
    }

    fn admissible(&self, condition: Option<u32>) -> Result<Vec<usize>> {
        match condition {
            None => Ok((0..self.items.len()).collect()),
            Some(c) => {
                if self.classes.binary_search(&c).is_err() {
                    return Err(Error::UnknownClass(c));
                }
                Ok((0..self.items.len())
                    .filter(|&k| self.items[k].class_id == c)
                    .collect())
            }
        }
    }
}

/// Patch side used for CA maps when none is configured: `side / 8`, at
/// least 1.
pub fn default_patch(side: usize) -> usize {
    (side / 8).max(1)
}

/// A previously averaged map and the weight it gets in the convex fusion
/// `(1 - w_c) current + w_c reused`.
#[derive(Debug, Clone, Copy)]
pub struct CaReuse<'a> {
    pub map: &'a CAMap,
    pub w_c: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PredictOptions<'a> {
    /// Patch side for the CA map; [`default_patch`] when `None`.
    pub patch: Option<usize>,
    pub reuse: Option<CaReuse<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Noise prediction (VP) or velocity (flow matching).
    pub eps: LatentGrid,
    /// Posterior-mean clean latent.
    pub z0: LatentGrid,
    /// The map in effect for this evaluation: the fused map when a reused
    /// map was supplied, the denoiser's own map otherwise.
    pub ca: CAMap,
}

/// `(signal, sigma)` coefficients of the schedule at a timestep where the
/// prediction is defined (`sigma > 0`).
fn kernel(t: Timestep, sched: &NoiseSchedule) -> Result<(f64, f64)> {
    sched.check_time(t)?;
    if t == 0.0 {
        return Err(Error::domain("the denoiser is undefined at t = 0"));
    }
    let (s, sigma) = sched.coefficients(t)?;
    if !(sigma > 0.0) {
        return Err(Error::domain("the denoiser needs a positive noise level"));
    }
    Ok((s, sigma))
}

/// Patch tiling of a `h x w` plane with patch side `p`.
struct Tiling {
    p: usize,
    gh: usize,
    gw: usize,
    width: usize,
}

impl Tiling {
    fn new(h: usize, w: usize, p: usize) -> Self {
        Self {
            p,
            gh: h.div_ceil(p),
            gw: w.div_ceil(p),
            width: w,
        }
    }

    fn patches(&self) -> usize {
        self.gh * self.gw
    }

    #[inline]
    fn patch_of(&self, pixel: usize) -> usize {
        let (y, x) = (pixel / self.width, pixel % self.width);
        (y / self.p) * self.gw + x / self.p
    }
}

/// Posterior weights `(item index, probability)` over the admissible items.
pub fn posterior_weights(
    bank: &LatentBank,
    z_t: &LatentGrid,
    t: Timestep,
    condition: Option<u32>,
    sched: &NoiseSchedule,
) -> Result<Vec<(usize, f64)>> {
    z_t.check_same_shape(&bank.items[0].latent)?;
    let (s, sigma) = kernel(t, sched)?;
    let idx = bank.admissible(condition)?;
    let logits: Vec<f64> = idx
        .iter()
        .map(|&k| {
            let it = &bank.items[k];
            let d: f64 = z_t
                .data()
                .iter()
                .zip(it.latent.data())
                .map(|(z, x)| (z - s * x) * (z - s * x))
                .sum();
            math::ln(it.weight) - d / (2.0 * sigma * sigma)
        })
        .collect();
    let lse = math::log_sum_exp(&logits);
    Ok(idx
        .into_iter()
        .zip(logits)
        .map(|(k, l)| (k, math::exp(l - lse)))
        .collect())
}

/// Closed-form prediction at `t`, unconditional when `condition` is `None`.
pub fn predict(
    bank: &LatentBank,
    z_t: &LatentGrid,
    t: Timestep,
    condition: Option<u32>,
    sched: &NoiseSchedule,
    opts: &PredictOptions<'_>,
) -> Result<Prediction> {
    z_t.check_same_shape(&bank.items[0].latent)?;
    let (s, sigma) = kernel(t, sched)?;
    let (channels, h, w) = z_t.shape();
    let plane = h * w;
    let p = opts.patch.unwrap_or_else(|| default_patch(h.max(w)));
    if p == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let tiling = Tiling::new(h, w, p);
    let n_patch = tiling.patches();
    let patch_index: Vec<usize> = (0..plane).map(|i| tiling.patch_of(i)).collect();
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let n_items = bank.items.len();

    // Per-item, per-patch squared distances |z_t - s x_k|^2.
    let mut dist = vec![0.0; n_items * n_patch];
    for (k, it) in bank.items.iter().enumerate() {
        let row = &mut dist[k * n_patch..(k + 1) * n_patch];
        for c in 0..channels {
            let zc = &z_t.data()[c * plane..(c + 1) * plane];
            let xc = it.latent.channel(c);
            for i in 0..plane {
                let d = zc[i] - s * xc[i];
                row[patch_index[i]] += d * d;
            }
        }
    }

    // Denoiser CA map: per-patch class posterior over the whole bank.
    let classes = bank.classes().to_vec();
    let n_cls = classes.len();
    let class_col: Vec<usize> = bank
        .items
        .iter()
        .map(|it| classes.binary_search(&it.class_id).expect("class listed"))
        .collect();
    let log_prior: Vec<f64> = bank.items.iter().map(|it| math::ln(it.weight)).collect();
    // log M(patch, class), kept in log space for the reweighting below.
    let mut log_map = vec![f64::NEG_INFINITY; n_patch * n_cls];
    let mut logits = vec![0.0; n_items];
    for q in 0..n_patch {
        for k in 0..n_items {
            logits[k] = log_prior[k] - dist[k * n_patch + q] * inv_two_var;
        }
        let lse = math::log_sum_exp(&logits);
        let row = &mut log_map[q * n_cls..(q + 1) * n_cls];
        let mut per_class = vec![Vec::new(); n_cls];
        for k in 0..n_items {
            per_class[class_col[k]].push(logits[k] - lse);
        }
        for (cell, vals) in row.iter_mut().zip(&per_class) {
            *cell = math::log_sum_exp(vals);
        }
    }
    let own_values: Vec<f64> = log_map.iter().map(|&l| math::exp(l)).collect();
    let own = CAMap::from_parts_unchecked(tiling.gh, tiling.gw, classes.clone(), own_values);

    // Global posterior over admissible items.
    let admissible = bank.admissible(condition)?;
    let global: Vec<f64> = admissible
        .iter()
        .map(|&k| {
            let d: f64 = dist[k * n_patch..(k + 1) * n_patch].iter().sum();
            log_prior[k] - d * inv_two_var
        })
        .collect();

    let (z0, ca) = match opts.reuse {
        None => {
            let lse = math::log_sum_exp(&global);
            let weights: Vec<f64> = global.iter().map(|l| math::exp(l - lse)).collect();
            let mut acc = vec![0.0; channels * plane];
            for (&k, &pk) in admissible.iter().zip(&weights) {
                for (a, x) in acc.iter_mut().zip(bank.items[k].latent.data()) {
                    *a += pk * x;
                }
            }
            (LatentGrid::new(channels, h, w, acc)?, own)
        }
        Some(reuse) => {
            if !(0.0..=1.0).contains(&reuse.w_c) {
                return Err(Error::invalid("w_c must lie in [0, 1]"));
            }
            let reused = reuse.map.resample_rows(tiling.gh, tiling.gw)?;
            if reused.classes() != own.classes() {
                return Err(Error::invalid("reused CA map has different classes"));
            }
            let fused = fuse_maps(&own, &reused, reuse.w_c)?;
            // Per-patch item weights: global posterior times fused/own ratio.
            let mut patch_weights = vec![0.0; n_patch * admissible.len()];
            let mut buf = vec![0.0; admissible.len()];
            for q in 0..n_patch {
                for (j, &k) in admissible.iter().enumerate() {
                    let col = class_col[k];
                    let fused_v = fused.values()[q * n_cls + col];
                    buf[j] = global[j] + math::ln(fused_v) - log_map[q * n_cls + col];
                }
                // No admissible class has mass here: keep the plain posterior.
                if buf.iter().all(|l| *l == f64::NEG_INFINITY) {
                    buf.copy_from_slice(&global);
                }
                let lse = math::log_sum_exp(&buf);
                for (j, l) in buf.iter().enumerate() {
                    patch_weights[q * admissible.len() + j] = math::exp(l - lse);
                }
            }
            let mut acc = vec![0.0; channels * plane];
            for c in 0..channels {
                for i in 0..plane {
                    let q = patch_index[i];
                    let ws = &patch_weights[q * admissible.len()..(q + 1) * admissible.len()];
                    acc[c * plane + i] = admissible
                        .iter()
                        .zip(ws)
                        .map(|(&k, wk)| wk * bank.items[k].latent.channel(c)[i])
                        .sum();
                }
            }
            (LatentGrid::new(channels, h, w, acc)?, fused)
        }
    };

    let eps = match sched.kind() {
        ScheduleKind::VariancePreserving => z_t.lincomb(1.0 / sigma, &z0, -s / sigma)?,
        ScheduleKind::FlowMatching => z_t.lincomb(1.0 / t, &z0, -1.0 / t)?,
    };
    Ok(Prediction { eps, z0, ca })
}

/// `(1 - w_c) current + w_c reused`, elementwise.
pub(crate) fn fuse_maps(current: &CAMap, reused: &CAMap, w_c: f64) -> Result<CAMap> {
    current.same_shape(reused)?;
    let values = current
        .values()
        .iter()
        .zip(reused.values())
        .map(|(a, b)| (1.0 - w_c) * a + w_c * b)
        .collect();
    let (gh, gw) = current.grid();
    Ok(CAMap::from_parts_unchecked(
        gh,
        gw,
        current.classes().to_vec(),
        values,
    ))
}
