mod common;

use frecas_core::bank::procedural::{procedural_bank, ProceduralSpec};
use frecas_core::bank::{predict, CAMap, LatentBank, PredictOptions};
use frecas_core::cascade::{
    compute_cost, run_frecas, run_stage, shifted_entry, transition, Guidance, RunOptions,
    StageDenoiser, StagePlan, StageSpec,
};
use frecas_core::codec::LatentCodec;
use frecas_core::grid::{resample_bilinear_to, seeded_gaussian};
use frecas_core::schedule::{snr_of_alpha, NoiseSchedule, ScheduleKind};
use frecas_core::Resolution;

fn res(side: usize) -> Resolution {
    Resolution::new(side).unwrap()
}

fn bank(side: usize, items: usize) -> LatentBank {
    procedural_bank(&ProceduralSpec {
        seed: 3,
        items,
        classes: 3,
        channels: 4,
        side,
    })
    .unwrap()
}

fn spec(side: usize, steps: usize, last: f64) -> StageSpec {
    StageSpec {
        resolution: res(side),
        steps,
        last_timestep: last,
        w_low: 4.0,
        w_high: 12.0,
        w_c: 0.5,
    }
}

#[test]
fn one_stage_plan_is_plain_cfg_ddim() {
    let b = bank(8, 12);
    let sched = NoiseSchedule::sd_default();
    for (w, steps, seed) in [(7.5, 10, 7u64), (1.0, 4, 1), (0.0, 6, 2), (3.0, 1, 9)] {
        let plan =
            StagePlan::direct(res(8), res(8), steps, w, ScheduleKind::VariancePreserving).unwrap();
        let out = run_frecas(
            &plan,
            LatentCodec::Identity,
            &b,
            &sched,
            1,
            seed,
            &RunOptions::default(),
        )
        .unwrap();
        let want = common::standalone_cfg_ddim(&b, &sched, 1, w, steps, seed);
        assert!(out.latent.max_abs_diff(&want).unwrap() <= 1e-6, "w={w}");
        assert_eq!(out.report.cost_units, steps as f64);
    }
}

#[test]
fn runs_are_deterministic_and_seed_dependent() {
    let b = bank(16, 8);
    let plan = StagePlan::preset("sdxl-x4", 8).unwrap();
    let sched = NoiseSchedule::sd_default();
    let opts = RunOptions {
        verify: true,
        ..RunOptions::default()
    };
    let run = |seed| run_frecas(&plan, LatentCodec::Haar1, &b, &sched, 0, seed, &opts).unwrap();
    let (a, again, other) = (run(5), run(5), run(6));
    assert_eq!(a.image, again.image);
    assert_eq!(a.report, again.report);
    assert_ne!(a.image, other.image);
    assert_eq!(a.image.shape(), (1, 32, 32));
}

#[test]
fn equal_resolution_identity_transition_keeps_snr() {
    let b = bank(8, 6);
    let sched = NoiseSchedule::sd_default();
    let from = spec(8, 5, 300.0);
    let to = spec(8, 5, 0.0);
    let plan = StagePlan {
        stages: vec![from, to],
        gamma: 2.0,
        schedule_kind: ScheduleKind::VariancePreserving,
        base: res(8),
    };
    let den = StageDenoiser {
        bank: &b,
        sched: &sched,
        condition: 2,
        guidance: Guidance::Plain(4.0),
        reuse: None,
        patch: None,
    };
    let z = seeded_gaussian(b.shape(), 1);
    let t1 = transition(&z, &from, &to, &plan, LatentCodec::Identity, &den, 10).unwrap();
    let t2 = transition(&z, &from, &to, &plan, LatentCodec::Identity, &den, 11).unwrap();
    assert_eq!(t1.first_timestep, 300.0);
    assert_eq!(t1.z0_next, t1.z0_prev);
    assert_eq!(t1.z0_prev, t2.z0_prev);
    let expect = sched.diffuse(&t1.z0_prev, 300.0, &t1.noise).unwrap();
    assert_eq!(t1.z_first, expect);
    // Two seeds differ only through the injected noise.
    let (_, sigma) = sched.coefficients(300.0).unwrap();
    let diff = t1.z_first.sub(&t2.z_first).unwrap();
    let noise_diff = t1.noise.sub(&t2.noise).unwrap().scale(sigma);
    assert!(diff.max_abs_diff(&noise_diff).unwrap() < 1e-12);
    assert_ne!(t1.noise, t2.noise);
}

#[test]
fn haar_transition_only_interpolates_and_renoises() {
    let b8 = bank(8, 6);
    let sched = NoiseSchedule::sd_default();
    let plan = StagePlan::preset("sdxl-x4", 8).unwrap();
    let (from, to) = (plan.stages[0], plan.stages[1]);
    let den = StageDenoiser {
        bank: &b8,
        sched: &sched,
        condition: 0,
        guidance: Guidance::Plain(7.5),
        reuse: None,
        patch: None,
    };
    let z = seeded_gaussian(b8.shape(), 4);
    let tr = transition(&z, &from, &to, &plan, LatentCodec::Haar1, &den, 3).unwrap();

    // Chain without the interpolation step: decode then encode is lossless.
    let codec = LatentCodec::Haar1;
    let no_interp = codec.encode(&codec.decode(&tr.z0_prev).unwrap()).unwrap();
    assert!(no_interp.max_abs_diff(&tr.z0_prev).unwrap() <= 1e-12 * tr.z0_prev.max_abs());

    // With it, the only change is the resize.
    let resized = resample_bilinear_to(&tr.image_prev, 32, 32);
    assert_eq!(tr.image_next, resized);
    let want = codec.encode(&resized).unwrap();
    assert_eq!(tr.z0_next, want);
    let back = codec.decode(&tr.z0_next).unwrap();
    assert!(back.max_abs_diff(&tr.image_next).unwrap() <= 1e-12 * tr.image_next.max_abs());
    let expect = sched
        .diffuse(&tr.z0_next, tr.first_timestep, &tr.noise)
        .unwrap();
    assert_eq!(tr.z_first, expect);
}

#[test]
fn sdxl_x4_entry_timestep_matches_closed_form() {
    let plan = StagePlan::preset("sdxl-x4", 32).unwrap();
    let sched = NoiseSchedule::sd_default();
    let f = shifted_entry(&plan, &sched, &plan.stages[0], &plan.stages[1]).unwrap();
    let alpha_l: f64 = (0..200)
        .map(|k| 1.0 - (1e-4 + (0.02 - 1e-4) * k as f64 / 999.0))
        .product();
    let r = 0.5f64.powf(1.5);
    let alpha_f = r * alpha_l / (1.0 + (r - 1.0) * alpha_l);
    assert!((sched.alpha_at(f).unwrap() - alpha_f).abs() <= 1e-12);
    assert!(f > 200.0 && f < 1000.0);
    let got = snr_of_alpha(sched.alpha_at(f).unwrap());
    let want = snr_of_alpha(alpha_l) * r;
    assert!((got - want).abs() <= 1e-6 * want);
}

#[test]
fn multi_stage_reports_are_consistent() {
    let b = bank(32, 6);
    let sched = NoiseSchedule::sd_default();
    for name in ["sdxl-x16", "sd21-x16"] {
        let plan = StagePlan::preset(name, 8).unwrap();
        let opts = RunOptions {
            verify: true,
            keep_stages: true,
            ..RunOptions::default()
        };
        let out = run_frecas(&plan, LatentCodec::Identity, &b, &sched, 1, 2, &opts).unwrap();
        let r = &out.report;
        assert!(r.snr_continuity_error(&plan, &sched).unwrap() <= 1e-6);
        let sum: f64 = r.stages.iter().map(|s| s.cost).sum();
        assert_eq!(sum, r.cost_units);
        assert_eq!(r.cost_units, compute_cost(&plan));
        for w in r.stages.windows(2) {
            assert!(w[0].resolution < w[1].resolution);
            assert!(w[1].first_timestep > w[0].last_timestep);
        }
        assert_eq!(out.stages.len(), 3);
        assert!(out.stages[0].transition.is_none());
        for st in &out.stages[1..] {
            let tr = st.transition.as_ref().unwrap();
            assert_eq!(&tr.z_first, &st.z_first);
        }
    }
}

#[test]
fn flow_cascade_runs() {
    let b = bank(16, 6);
    let plan = StagePlan::preset("sd3-x4", 8).unwrap();
    let sched = NoiseSchedule::flow_matching();
    let opts = RunOptions {
        verify: true,
        ..RunOptions::default()
    };
    let out = run_frecas(&plan, LatentCodec::Identity, &b, &sched, 0, 1, &opts).unwrap();
    assert!(out.image.is_finite());
    let f = out.report.stages[1].first_timestep;
    // k = sqrt(2) at L = 0.05.
    let k = 2f64.sqrt();
    assert!((f - k * 0.05 / (1.0 + (k - 1.0) * 0.05)).abs() <= 1e-12);
}

#[test]
fn single_step_stage() {
    let b = bank(8, 5);
    let sched = NoiseSchedule::sd_default();
    let den = StageDenoiser {
        bank: &b,
        sched: &sched,
        condition: 1,
        guidance: Guidance::Plain(2.0),
        reuse: None,
        patch: None,
    };
    let z = seeded_gaussian(b.shape(), 8);
    let out = run_stage(&spec(8, 1, 0.0), &z, 500.0, &den, true).unwrap();
    assert_eq!(out.grid, vec![500.0, 0.0]);
    let (eps, _) = den.evaluate(&z, 500.0).unwrap();
    let want = frecas_core::sampler::ddim_step(&z, &eps, 500.0, 0.0, &sched).unwrap();
    assert_eq!(out.z_last, want);
}

#[test]
fn unit_guidance_is_the_conditional_model() {
    let b = bank(8, 9);
    let sched = NoiseSchedule::sd_default();
    let den = StageDenoiser {
        bank: &b,
        sched: &sched,
        condition: 2,
        guidance: Guidance::Plain(1.0),
        reuse: None,
        patch: None,
    };
    let z = seeded_gaussian(b.shape(), 3);
    let (eps, _) = den.evaluate(&z, 700.0).unwrap();
    let cond = predict(&b, &z, 700.0, Some(2), &sched, &PredictOptions::default()).unwrap();
    assert!(eps.max_abs_diff(&cond.eps).unwrap() <= 1e-12);
}

#[test]
fn reused_map_changes_unsaturated_predictions() {
    let b = bank(8, 9);
    let sched = NoiseSchedule::sd_default();
    let z = seeded_gaussian(b.shape(), 12);
    let classes = b.classes().to_vec();
    let (rows, cols) = (1, 1);
    // All mass on class 0 in the single patch.
    let map = CAMap::new(rows, cols, classes, vec![1.0, 0.0, 0.0]).unwrap();
    let eval = |w_c| {
        StageDenoiser {
            bank: &b,
            sched: &sched,
            condition: 1,
            guidance: Guidance::Plain(4.0),
            reuse: Some((&map, w_c)),
            patch: Some(8),
        }
        .evaluate(&z, 950.0)
        .unwrap()
    };
    let (e0, m0) = eval(0.0);
    let (e1, _) = eval(1.0);
    let (ef, _) = eval(0.5);
    assert!(e0.max_abs_diff(&e1).unwrap() > 1e-6);
    assert!(m0.max_row_sum_error() <= 1e-12);
    assert!(ef.is_finite());
}
