use frecas_core::bank::CAMap;
use frecas_core::cascade::{average_ca_maps, fuse_ca_maps, ROW_STOCHASTIC_TOL};
use frecas_core::codec::LatentCodec;
use frecas_core::freq::{band_split, mode_power, radial_psd};
use frecas_core::grid::{resample_bilinear, seeded_gaussian};
use frecas_core::sampler::{
    cfg_combine, ddim_step, euler_flow_step, facfg_combine, predict_z0, GuidanceWeights,
};
use frecas_core::schedule::{shift_timestep_flow, snr_of_alpha, NoiseSchedule};
use frecas_core::{LatentGrid, Resolution};
use proptest::prelude::*;

fn res(side: usize) -> Resolution {
    Resolution::new(side).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn random_map(rows: usize, cols: usize, seed: u64) -> CAMap {
    let raw = seeded_gaussian((1, rows, cols), seed);
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row: Vec<f64> = (0..cols).map(|c| raw.at(0, r, c).exp()).collect();
        let s: f64 = row.iter().sum();
        values.extend(row.iter().map(|v| v / s));
    }
    let side = (rows as f64).sqrt() as usize;
    CAMap::new(side, side, (0..cols as u32).collect(), values).unwrap()
}

fn roll(g: &LatentGrid, dy: usize, dx: usize) -> LatentGrid {
    let (c, h, w) = g.shape();
    LatentGrid::from_fn(c, h, w, |k, y, x| g.at(k, (y + dy) % h, (x + dx) % w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resample_is_linear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64,
                          from in 2usize..12, to in 2usize..20) {
        let g1 = seeded_gaussian((2, from, from), seed);
        let g2 = seeded_gaussian((2, from, from), seed ^ 1);
        let lhs = resample_bilinear(&g1.lincomb(a, &g2, b).unwrap(), res(to));
        let rhs = resample_bilinear(&g1, res(to))
            .lincomb(a, &resample_bilinear(&g2, res(to)), b)
            .unwrap();
        let scale = 1.0 + lhs.max_abs();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-9 * scale);
    }

    #[test]
    fn resample_keeps_constants(c in -5.0..5.0f64, from in 2usize..12, to in 2usize..20) {
        let out = resample_bilinear(&LatentGrid::filled(3, from, from, c), res(to));
        prop_assert!(out.data().iter().all(|&v| v == c));
    }

    #[test]
    fn band_split_reconstructs(seed in any::<u64>(), side_pow in 2u32..7, base_pow in 1u32..7) {
        let side = 1usize << side_pow;
        let base = 1usize << base_pow.min(side_pow);
        let g = seeded_gaussian((2, side, side), seed).scale(10.0);
        let split = band_split(&g, res(base)).unwrap();
        let back = split.low.add(&split.high).unwrap();
        for ((x, y), l) in g.data().iter().zip(back.data()).zip(split.low.data()) {
            prop_assert!((x - y).abs() <= f64::EPSILON * (x.abs() + l.abs()));
        }
    }

    #[test]
    fn psd_ignores_circular_shifts(seed in any::<u64>(), dy in 0usize..16, dx in 0usize..16) {
        let g = seeded_gaussian((2, 16, 16), seed);
        let a = radial_psd(&g, 8).unwrap();
        let b = radial_psd(&roll(&g, dy, dx), 8).unwrap();
        for (p, q) in a.power.iter().zip(&b.power) {
            prop_assert!((p - q).abs() <= 1e-9 * p.abs().max(1e-12));
        }
    }

    #[test]
    fn parseval(seed in any::<u64>(), h in 2usize..13, w in 2usize..13) {
        let g = seeded_gaussian((1, h, w), seed);
        let modes = mode_power(&g);
        let mean_power = modes[0].iter().sum::<f64>() / (h * w) as f64;
        let mean_sq = g.sum_sq() / (h * w) as f64;
        prop_assert!(rel_close(mean_power, mean_sq, 1e-6));
    }

    #[test]
    fn vp_shift_matches_snr(last in 1.0..1000.0f64, ratio in 0.05..1.0f64, gamma in 0.0..4.0f64) {
        let sched = NoiseSchedule::sd_default();
        let want = sched.snr(last).unwrap() * ratio.powf(gamma);
        let floor = snr_of_alpha(sched.alpha_at(sched.max_time()).unwrap());
        if want < floor {
            prop_assert!(sched.shift_timestep_vp(last, ratio, gamma).is_err());
            return Ok(());
        }
        let f = sched.shift_timestep_vp(last, ratio, gamma).unwrap();
        prop_assert!(rel_close(sched.snr(f).unwrap(), want, 1e-6));
    }

    #[test]
    fn vp_shift_is_monotone(a in 1.0..999.0f64, d in 0.01..50.0f64, ratio in 0.1..1.0f64,
                            gamma in 0.0..3.0f64) {
        let sched = NoiseSchedule::sd_default();
        let b = (a + d).min(1000.0);
        let floor = snr_of_alpha(sched.alpha_at(sched.max_time()).unwrap());
        prop_assume!(sched.snr(b).unwrap() * ratio.powf(gamma) >= floor);
        let fa = sched.shift_timestep_vp(a, ratio, gamma).unwrap();
        let fb = sched.shift_timestep_vp(b, ratio, gamma).unwrap();
        prop_assert!(fa <= fb);
    }

    #[test]
    fn snr_decreases(a in 0.0..999.0f64, d in 0.01..10.0f64) {
        let sched = NoiseSchedule::sd_default();
        prop_assert!(sched.snr(a).unwrap() > sched.snr((a + d).min(1000.0)).unwrap());
    }

    #[test]
    fn flow_shift_involution(l in 0.0..=1.0f64, k in 0.01..100.0f64) {
        let f = shift_timestep_flow(l, k).unwrap();
        let back = shift_timestep_flow(f, 1.0 / k).unwrap();
        prop_assert!((back - l).abs() <= 1e-12);
    }

    #[test]
    fn flow_shift_is_monotone(a in 0.0..1.0f64, d in 1e-6..0.5f64, k in 1.0..64.0f64) {
        let fa = shift_timestep_flow(a, k).unwrap();
        let fb = shift_timestep_flow((a + d).min(1.0), k).unwrap();
        prop_assert!(fa < fb);
    }

    #[test]
    fn haar_round_trips(seed in any::<u64>(), c in 1usize..4, half in 1usize..17) {
        let side = 2 * half;
        let img = seeded_gaussian((c, side, side), seed).scale(3.0);
        let z = LatentCodec::Haar1.encode(&img).unwrap();
        prop_assert_eq!(z.shape(), (4 * c, half, half));
        let back = LatentCodec::Haar1.decode(&z).unwrap();
        prop_assert!(back.max_abs_diff(&img).unwrap() <= 1e-9 * img.max_abs());
        prop_assert!(rel_close(z.sum_sq(), img.sum_sq(), 1e-9));
        let lat = seeded_gaussian((4 * c, half, half), seed ^ 7);
        let again = LatentCodec::Haar1.encode(&LatentCodec::Haar1.decode(&lat).unwrap()).unwrap();
        prop_assert!(again.max_abs_diff(&lat).unwrap() <= 1e-9 * lat.max_abs());
    }

    #[test]
    fn identity_codec_is_identity(seed in any::<u64>()) {
        let g = seeded_gaussian((3, 6, 6), seed);
        prop_assert_eq!(LatentCodec::Identity.encode(&g).unwrap(), g.clone());
        prop_assert_eq!(LatentCodec::Identity.decode(&g).unwrap(), g);
    }

    #[test]
    fn facfg_with_equal_weights_is_cfg(seed in any::<u64>(), w in -2.0..20.0f64, base_pow in 1u32..7) {
        let unc = seeded_gaussian((2, 16, 16), seed);
        let con = seeded_gaussian((2, 16, 16), seed ^ 3).scale(2.0);
        let gw = GuidanceWeights { w_low: w, w_high: w, base: res(1 << base_pow.min(4)) };
        let fa = facfg_combine(&unc, &con, &gw).unwrap();
        let plain = cfg_combine(&unc, &con, w).unwrap();
        let m = unc.max_abs().max(con.max_abs());
        prop_assert!(fa.max_abs_diff(&plain).unwrap() <= 1e-5 * (1.0 + m));
    }

    #[test]
    fn facfg_is_linear(seed in any::<u64>(), c in -4.0..4.0f64, wl in 0.0..10.0f64, wh in 0.0..40.0f64) {
        prop_assume!(c.abs() > 1e-3);
        let unc = seeded_gaussian((2, 16, 16), seed);
        let con = seeded_gaussian((2, 16, 16), seed ^ 5);
        let gw = GuidanceWeights { w_low: wl, w_high: wh, base: res(8) };
        let out = facfg_combine(&unc, &con, &gw).unwrap();
        let scaled = facfg_combine(&unc.scale(c), &con.scale(c), &gw).unwrap();
        prop_assert!(scaled.max_abs_diff(&out.scale(c)).unwrap() <= 1e-9 * (1.0 + scaled.max_abs()));
    }

    #[test]
    fn ddim_step_reverses(seed in any::<u64>(), t in 2.0..1000.0f64, frac in 0.0..1.0f64) {
        let sched = NoiseSchedule::sd_default();
        let t_prev = t * frac;
        let z = seeded_gaussian((2, 8, 8), seed);
        let eps = seeded_gaussian((2, 8, 8), seed ^ 9);
        let down = ddim_step(&z, &eps, t, t_prev, &sched).unwrap();
        // Same eps back up: DDIM with eta = 0 is the deterministic map between the two levels.
        let z0 = predict_z0(&down, &eps, t_prev, &sched).unwrap();
        let a = sched.alpha_at(t).unwrap();
        let up = z0.lincomb(a.sqrt(), &eps, (1.0 - a).sqrt()).unwrap();
        prop_assert!(up.max_abs_diff(&z).unwrap() <= 1e-5);
    }

    #[test]
    fn euler_half_steps_compose(seed in any::<u64>(), t in 0.0..=1.0f64, a in 0.0..=1.0f64) {
        let v = seeded_gaussian((1, 4, 4), seed);
        let z = seeded_gaussian((1, 4, 4), seed ^ 2);
        let mid = t * (1.0 - a / 2.0);
        let end = t * (1.0 - a);
        let two = euler_flow_step(&euler_flow_step(&z, &v, t, mid).unwrap(), &v, mid, end).unwrap();
        let one = euler_flow_step(&z, &v, t, end).unwrap();
        prop_assert!(two.max_abs_diff(&one).unwrap() <= 1e-12);
    }

    #[test]
    fn ca_algebra_stays_row_stochastic(seed in any::<u64>(), w_c in 0.0..=1.0f64,
                                       side in 1usize..6, target in 1usize..9) {
        let cur = random_map(side * side, 4, seed);
        let prev: Vec<CAMap> = (0..3).map(|k| random_map(side * side, 4, seed ^ (k + 11))).collect();
        let avg = average_ca_maps(&prev).unwrap();
        prop_assert!(avg.max_row_sum_error() <= ROW_STOCHASTIC_TOL);
        let fused = fuse_ca_maps(&cur, &avg, w_c).unwrap();
        prop_assert!(fused.max_row_sum_error() <= ROW_STOCHASTIC_TOL);
        let moved = avg.resample_rows(target, target).unwrap();
        prop_assert!(moved.max_row_sum_error() <= ROW_STOCHASTIC_TOL);
        prop_assert_eq!(fuse_ca_maps(&cur, &avg, 0.0).unwrap(), cur.clone());
        prop_assert_eq!(fuse_ca_maps(&cur, &avg, 1.0).unwrap(), avg);
    }
}
