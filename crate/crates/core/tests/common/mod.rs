//! Reference implementations used as test oracles. They are written
//! directly from the defining formulas and share no code paths with the
//! library beyond its data types.
#![allow(dead_code)]

use frecas_core::bank::LatentBank;
use frecas_core::schedule::NoiseSchedule;
use frecas_core::LatentGrid;

/// Corner-aligned bilinear resize of one `h x w` plane.
pub fn bilinear_plane(src: &[f64], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f64> {
    let coord = |i: usize, n: usize, m: usize| -> f64 {
        if m == 1 {
            0.0
        } else {
            i as f64 * (n - 1) as f64 / (m - 1) as f64
        }
    };
    let mut out = vec![0.0; nh * nw];
    for y in 0..nh {
        let fy = coord(y, h, nh);
        let y0 = (fy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..nw {
            let fx = coord(x, w, nw);
            let x0 = (fx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let a = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let b = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out[y * nw + x] = a * (1.0 - ty) + b * ty;
        }
    }
    out
}

/// Low band of a plane: down to `base` and back up, both corner aligned.
pub fn low_band_plane(src: &[f64], side: usize, base: usize) -> Vec<f64> {
    let down = bilinear_plane(src, side, side, base, base);
    bilinear_plane(&down, base, base, side, side)
}

/// `|X(ky, kx)|^2 / (h w)` by the literal double sum.
pub fn naive_dft_power(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut out = vec![0.0; h * w];
    for ky in 0..h {
        for kx in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -tau * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                    re += plane[y * w + x] * phase.cos();
                    im += plane[y * w + x] * phase.sin();
                }
            }
            out[ky * w + kx] = (re * re + im * im) / (h * w) as f64;
        }
    }
    out
}

/// Posterior-mean clean latent and noise prediction of a VP bank denoiser,
/// computed item by item from the Gaussian likelihood.
pub fn brute_force_vp(
    bank: &LatentBank,
    z_t: &LatentGrid,
    alpha: f64,
    condition: Option<u32>,
) -> (Vec<f64>, Vec<f64>) {
    let s = alpha.sqrt();
    let var = 1.0 - alpha;
    let items: Vec<_> = bank
        .items()
        .iter()
        .filter(|it| condition.is_none_or(|c| it.class_id == c))
        .collect();
    let log_w: Vec<f64> = items
        .iter()
        .map(|it| {
            let mut d = 0.0;
            for (z, x) in z_t.data().iter().zip(it.latent.data()) {
                d += (z - s * x).powi(2);
            }
            it.weight.ln() - d / (2.0 * var)
        })
        .collect();
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut z0 = vec![0.0; z_t.len()];
    for (it, wk) in items.iter().zip(&w) {
        for (acc, x) in z0.iter_mut().zip(it.latent.data()) {
            *acc += wk / total * x;
        }
    }
    let eps = z_t
        .data()
        .iter()
        .zip(&z0)
        .map(|(z, x)| (z - s * x) / var.sqrt())
        .collect();
    (z0, eps)
}

/// Plain CFG + DDIM (eta = 0) from pure noise at `T` down to 0 in `steps`
/// evenly spaced steps, evaluating the bank through the public predictor.
pub fn standalone_cfg_ddim(
    bank: &LatentBank,
    sched: &NoiseSchedule,
    condition: u32,
    w: f64,
    steps: usize,
    seed: u64,
) -> LatentGrid {
    use frecas_core::bank::{predict, PredictOptions};
    use frecas_core::grid::seeded_gaussian;

    let shape = bank.shape();
    let mut z = seeded_gaussian(shape, seed).into_data();
    let t_max = sched.max_time();
    let opts = PredictOptions::default();
    for j in 0..steps {
        let t = t_max - t_max * j as f64 / steps as f64;
        let t_prev = if j + 1 == steps {
            0.0
        } else {
            t_max - t_max * (j + 1) as f64 / steps as f64
        };
        let zt = LatentGrid::new(shape.0, shape.1, shape.2, z.clone()).unwrap();
        let unc = predict(bank, &zt, t, None, sched, &opts).unwrap().eps;
        let con = predict(bank, &zt, t, Some(condition), sched, &opts)
            .unwrap()
            .eps;
        let a = sched.alpha_at(t).unwrap();
        let a_prev = sched.alpha_at(t_prev).unwrap();
        for ((zi, u), c) in z.iter_mut().zip(unc.data()).zip(con.data()) {
            let e = (1.0 - w) * u + w * c;
            let x0 = (*zi - (1.0 - a).sqrt() * e) / a.sqrt();
            *zi = a_prev.sqrt() * x0 + (1.0 - a_prev).sqrt() * e;
        }
    }
    LatentGrid::new(shape.0, shape.1, shape.2, z).unwrap()
}
