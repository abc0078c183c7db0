//! The cascade: stage execution, transitions between resolutions,
//! cross-attention map reuse, and the full run.

mod plan;

use alloc::format;
use alloc::vec::Vec;

pub use plan::{compute_cost, StagePlan, StageSpec, DEFAULT_BASE_SIDE, PRESET_NAMES};

use crate::bank::{predict, CAMap, CaReuse, LatentBank, PredictOptions};
use crate::codec::LatentCodec;
use crate::error::{Error, Result};
use crate::grid::{resample_bilinear_to, seeded_gaussian, LatentGrid};
use crate::math;
use crate::sampler::{cfg_combine, facfg_combine, predict_z0, sampler_step, GuidanceWeights};
use crate::schedule::{shift_timestep_flow, NoiseSchedule, ScheduleKind, Timestep};

/// Rows of fused and averaged maps must stay within this of 1.
pub const ROW_STOCHASTIC_TOL: f64 = 1e-12;

/// Elementwise mean of maps with identical shape.
pub fn average_ca_maps(maps: &[CAMap]) -> Result<CAMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("cannot average zero CA maps"))?;
    let mut acc = alloc::vec![0.0; first.values().len()];
    for m in maps {
        first.same_shape(m)?;
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += v;
        }
    }
    let n = maps.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    let (gh, gw) = first.grid();
    Ok(CAMap::from_parts_unchecked(
        gh,
        gw,
        first.classes().to_vec(),
        acc,
    ))
}

/// Convex fusion `(1 - w_c) current + w_c averaged`.
pub fn fuse_ca_maps(current: &CAMap, averaged: &CAMap, w_c: f64) -> Result<CAMap> {
    if !(0.0..=1.0).contains(&w_c) {
        return Err(Error::invalid(format!("w_c {w_c} outside [0, 1]")));
    }
    if w_c == 0.0 {
        current.same_shape(averaged)?;
        return Ok(current.clone());
    }
    if w_c == 1.0 {
        current.same_shape(averaged)?;
        return Ok(averaged.clone());
    }
    crate::bank::fuse_maps(current, averaged, w_c)
}

/// Seed of the noise injected by the transition into stage `stage`.
pub fn transition_seed(run_seed: u64, stage: usize) -> u64 {
    math::splitmix64(run_seed ^ math::splitmix64(0x7472_616e_7300_0000 ^ stage as u64))
}

/// How the conditional and unconditional scores are combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Guidance {
    Plain(f64),
    FrequencyAware(GuidanceWeights),
}

/// The guided model used within one stage: two bank evaluations per call,
/// optionally with a reused CA map.
#[derive(Debug, Clone)]
pub struct StageDenoiser<'a> {
    pub bank: &'a LatentBank,
    pub sched: &'a NoiseSchedule,
    pub condition: u32,
    pub guidance: Guidance,
    pub reuse: Option<(&'a CAMap, f64)>,
    pub patch: Option<usize>,
}

impl StageDenoiser<'_> {
    /// Guided prediction and the CA map in effect at `(z_t, t)`.
    pub fn evaluate(&self, z_t: &LatentGrid, t: Timestep) -> Result<(LatentGrid, CAMap)> {
        let opts = PredictOptions {
            patch: self.patch,
            reuse: self.reuse.map(|(map, w_c)| CaReuse { map, w_c }),
        };
        let unc = predict(self.bank, z_t, t, None, self.sched, &opts)?;
        let cond = predict(self.bank, z_t, t, Some(self.condition), self.sched, &opts)?;
        let eps = match &self.guidance {
            Guidance::Plain(w) => cfg_combine(&unc.eps, &cond.eps, *w)?,
            Guidance::FrequencyAware(gw) => facfg_combine(&unc.eps, &cond.eps, gw)?,
        };
        Ok((eps, cond.ca))
    }
}

/// Intermediate states of one transition, in arrow order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTrace {
    /// Denoised estimate at the previous stage.
    pub z0_prev: LatentGrid,
    /// Decoded previous-stage image.
    pub image_prev: LatentGrid,
    /// Image after bilinear interpolation to the next stage.
    pub image_next: LatentGrid,
    /// Re-encoded clean latent of the next stage.
    pub z0_next: LatentGrid,
    /// Fresh noise used for re-diffusion.
    pub noise: LatentGrid,
    pub z_first: LatentGrid,
    pub first_timestep: Timestep,
}

/// Entry timestep of `to` given the last timestep of `from`.
pub fn shifted_entry(
    plan: &StagePlan,
    sched: &NoiseSchedule,
    from: &StageSpec,
    to: &StageSpec,
) -> Result<Timestep> {
    let prev = from.resolution.side() as f64;
    let next = to.resolution.side() as f64;
    match plan.schedule_kind {
        ScheduleKind::VariancePreserving => {
            sched.shift_timestep_vp(from.last_timestep, prev / next, plan.gamma)
        }
        ScheduleKind::FlowMatching => shift_timestep_flow(from.last_timestep, next / prev),
    }
}

/// Moves the last latent of `from` to the first latent of `to`:
/// denoise, decode, interpolate, encode, diffuse.
pub fn transition(
    z_last: &LatentGrid,
    from: &StageSpec,
    to: &StageSpec,
    plan: &StagePlan,
    codec: LatentCodec,
    denoiser: &StageDenoiser<'_>,
    seed: u64,
) -> Result<TransitionTrace> {
    if to.resolution < from.resolution {
        return Err(Error::invalid("transition must not decrease resolution"));
    }
    if z_last.resolution()? != from.resolution {
        return Err(Error::invalid(
            "latent does not match the source stage resolution",
        ));
    }
    let last = from.last_timestep;
    let (eps, _) = denoiser.evaluate(z_last, last)?;
    let z0_prev = predict_z0(z_last, &eps, last, denoiser.sched)?;
    let image_prev = codec.decode(&z0_prev)?;
    let side = to.resolution.side() * codec.spatial_factor();
    let image_next = resample_bilinear_to(&image_prev, side, side);
    let z0_next = codec.encode(&image_next)?;
    let first = shifted_entry(plan, denoiser.sched, from, to)?;
    let noise = seeded_gaussian(z0_next.shape(), seed);
    let z_first = denoiser.sched.diffuse(&z0_next, first, &noise)?;
    Ok(TransitionTrace {
        z0_prev,
        image_prev,
        image_next,
        z0_next,
        noise,
        z_first,
        first_timestep: first,
    })
}

/// Evaluation grid from `first` down to `last` in `steps` equal steps.
pub fn step_grid(first: Timestep, last: Timestep, steps: usize) -> Result<Vec<Timestep>> {
    if steps == 0 {
        return Err(Error::invalid("a stage needs at least one step"));
    }
    if !(first > last) {
        return Err(Error::domain(format!(
            "stage must start after it ends: first {first}, last {last}"
        )));
    }
    let mut grid: Vec<Timestep> = (0..steps)
        .map(|j| first - (first - last) * j as f64 / steps as f64)
        .collect();
    grid.push(last);
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub z_last: LatentGrid,
    /// Mean of the per-step CA maps.
    pub avg_map: CAMap,
    /// Timesteps visited, `steps + 1` values ending at the stage's last one.
    pub grid: Vec<Timestep>,
}

/// Runs one stage from `(z_first, first)` down to `spec.last_timestep`.
pub fn run_stage(
    spec: &StageSpec,
    z_first: &LatentGrid,
    first: Timestep,
    denoiser: &StageDenoiser<'_>,
    verify: bool,
) -> Result<StageOutput> {
    if z_first.resolution()? != spec.resolution {
        return Err(Error::invalid("latent does not match the stage resolution"));
    }
    let grid = step_grid(first, spec.last_timestep, spec.steps)?;
    let mut z = z_first.clone();
    let mut maps = Vec::with_capacity(spec.steps);
    for w in grid.windows(2) {
        let (eps, ca) = denoiser.evaluate(&z, w[0])?;
        if verify {
            let err = ca.max_row_sum_error();
            if err > ROW_STOCHASTIC_TOL {
                return Err(Error::domain(format!("CA map rows off by {err}")));
            }
        }
        z = sampler_step(&z, &eps, w[0], w[1], denoiser.sched)?;
        if verify && !z.is_finite() {
            return Err(Error::domain("latent became non-finite"));
        }
        maps.push(ca);
    }
    Ok(StageOutput {
        z_last: z,
        avg_map: average_ca_maps(&maps)?,
        grid,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageRecord {
    pub resolution: usize,
    pub steps: usize,
    pub first_timestep: Timestep,
    pub last_timestep: Timestep,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunReport {
    pub seed: u64,
    pub condition: u32,
    pub cost_units: f64,
    pub stages: Vec<StageRecord>,
}

impl RunReport {
    /// Largest relative deviation of `snr(F)` from `snr(L) ratio^gamma`
    /// over all transitions; 0 for single-stage or flow runs.
    pub fn snr_continuity_error(&self, plan: &StagePlan, sched: &NoiseSchedule) -> Result<f64> {
        if plan.schedule_kind != ScheduleKind::VariancePreserving {
            return Ok(0.0);
        }
        let mut worst: f64 = 0.0;
        for w in self.stages.windows(2) {
            let ratio = w[0].resolution as f64 / w[1].resolution as f64;
            let want = sched.snr(w[0].last_timestep)? * math::powf(ratio, plan.gamma);
            let got = sched.snr(w[1].first_timestep)?;
            worst = worst.max((got - want).abs() / want);
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Check CA row sums, SNR continuity and finiteness during the run.
    pub verify: bool,
    /// Keep per-stage latents and transition traces in the output.
    pub keep_stages: bool,
    /// CA patch side override.
    pub patch: Option<usize>,
    /// Use plain CFG with each stage's low-band weight in every stage.
    pub plain_cfg: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub z_first: LatentGrid,
    pub z_last: LatentGrid,
    pub transition: Option<TransitionTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub image: LatentGrid,
    pub latent: LatentGrid,
    pub report: RunReport,
    pub stages: Vec<StageTrace>,
}

/// The schedule matching a plan's kind (the default VP curve for VP plans).
pub fn schedule_for(plan: &StagePlan) -> NoiseSchedule {
    match plan.schedule_kind {
        ScheduleKind::VariancePreserving => NoiseSchedule::sd_default(),
        ScheduleKind::FlowMatching => NoiseSchedule::flow_matching(),
    }
}

/// Full cascaded sampling run.
///
/// Stage 0 starts from `seeded_gaussian(shape, seed)` at the schedule's
/// maximum time and uses plain CFG; later stages enter through
/// [`transition`] (noise seeded by [`transition_seed`]) and use
/// frequency-aware CFG cut at the previous stage's resolution together with
/// the previous stage's averaged CA map. The final latent is decoded.
pub fn run_frecas(
    plan: &StagePlan,
    codec: LatentCodec,
    bank: &LatentBank,
    sched: &NoiseSchedule,
    condition: u32,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    plan.validate()?;
    if sched.kind() != plan.schedule_kind {
        return Err(Error::invalid("schedule kind does not match the plan"));
    }
    if bank.classes().binary_search(&condition).is_err() {
        return Err(Error::UnknownClass(condition));
    }
    let channels = bank.channels();
    let mut records = Vec::with_capacity(plan.stages.len());
    let mut traces = Vec::new();

    let s0 = plan.stages[0];
    let mut stage_bank = bank.resample(s0.resolution);
    let mut z = seeded_gaussian((channels, s0.resolution.side(), s0.resolution.side()), seed);
    let mut first = sched.max_time();
    let mut trace_in: Option<TransitionTrace> = None;
    let mut reused: Option<CAMap> = None;

    for (i, spec) in plan.stages.iter().enumerate() {
        let guidance = if i == 0 || opts.plain_cfg {
            Guidance::Plain(spec.w_low)
        } else {
            Guidance::FrequencyAware(GuidanceWeights {
                w_low: spec.w_low,
                w_high: spec.w_high,
                base: plan.stages[i - 1].resolution,
            })
        };
        let denoiser = StageDenoiser {
            bank: &stage_bank,
            sched,
            condition,
            guidance,
            reuse: reused.as_ref().map(|m| (m, spec.w_c)),
            patch: opts.patch,
        };
        let out = run_stage(spec, &z, first, &denoiser, opts.verify)?;
        records.push(StageRecord {
            resolution: spec.resolution.side(),
            steps: spec.steps,
            first_timestep: first,
            last_timestep: spec.last_timestep,
            cost: plan.stage_cost(i),
        });
        if opts.keep_stages {
            traces.push(StageTrace {
                z_first: z.clone(),
                z_last: out.z_last.clone(),
                transition: trace_in.take(),
            });
        }
        z = out.z_last;
        if let Some(next) = plan.stages.get(i + 1) {
            let tr = transition(
                &z,
                spec,
                next,
                plan,
                codec,
                &denoiser,
                transition_seed(seed, i + 1),
            )?;
            reused = Some(out.avg_map);
            stage_bank = bank.resample(next.resolution);
            z = tr.z_first.clone();
            first = tr.first_timestep;
            if opts.keep_stages {
                trace_in = Some(tr);
            }
        }
    }

    let report = RunReport {
        seed,
        condition,
        cost_units: compute_cost(plan),
        stages: records,
    };
    if opts.verify {
        let err = report.snr_continuity_error(plan, sched)?;
        if err > 1e-6 {
            return Err(Error::domain(format!("SNR continuity violated by {err}")));
        }
    }
    let image = codec.decode(&z)?;
    Ok(RunOutput {
        image,
        latent: z,
        report,
        stages: traces,
    })
}
