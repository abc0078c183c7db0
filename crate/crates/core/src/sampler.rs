//! One-step denoising machinery: guidance rules and the deterministic
//! DDIM / flow-Euler updates.

use crate::error::{Error, Result};
use crate::freq::band_split;
use crate::grid::{LatentGrid, Resolution};
use crate::math;
use crate::schedule::{NoiseSchedule, ScheduleKind, Timestep};

/// Guidance strengths for the band below `base`'s Nyquist (`w_low`) and
/// the newly opened band above it (`w_high`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceWeights {
    pub w_low: f64,
    pub w_high: f64,
    pub base: Resolution,
}

/// Classifier-free guidance: `(1 - w) * eps_unc + w * eps_c`.
pub fn cfg_combine(eps_unc: &LatentGrid, eps_c: &LatentGrid, w: f64) -> Result<LatentGrid> {
    eps_unc.lincomb(1.0 - w, eps_c, w)
}

/// Frequency-aware guidance: both scores are split at `gw.base` and each
/// band gets its own CFG weight; the guided bands are summed.
pub fn facfg_combine(
    eps_unc: &LatentGrid,
    eps_c: &LatentGrid,
    gw: &GuidanceWeights,
) -> Result<LatentGrid> {
    if !(gw.w_low.is_finite() && gw.w_high.is_finite()) {
        return Err(Error::invalid("guidance weights must be finite"));
    }
    eps_unc.check_same_shape(eps_c)?;
    let unc = band_split(eps_unc, gw.base)?;
    let cond = band_split(eps_c, gw.base)?;
    let low = cfg_combine(&unc.low, &cond.low, gw.w_low)?;
    let high = cfg_combine(&unc.high, &cond.high, gw.w_high)?;
    low.add(&high)
}

/// Clean-latent estimate from a model prediction.
///
/// VP: `(z_t - sqrt(1 - a) eps) / sqrt(a)`; flow: `z_t - t v`.
pub fn predict_z0(
    z_t: &LatentGrid,
    pred: &LatentGrid,
    t: Timestep,
    sched: &NoiseSchedule,
) -> Result<LatentGrid> {
    sched.check_time(t)?;
    match sched.kind() {
        ScheduleKind::VariancePreserving => {
            let a = sched.alpha_at(t)?;
            let inv = 1.0 / math::sqrt(a);
            z_t.lincomb(inv, pred, -math::sqrt(1.0 - a) * inv)
        }
        ScheduleKind::FlowMatching => z_t.lincomb(1.0, pred, -t),
    }
}

fn check_order(t: Timestep, t_prev: Timestep) -> Result<()> {
    if !(t_prev <= t) {
        return Err(Error::domain(alloc::format!(
            "step must move backwards in time: {t} -> {t_prev}"
        )));
    }
    Ok(())
}

/// Deterministic DDIM update (eta = 0) from `t` to `t_prev`.
pub fn ddim_step(
    z_t: &LatentGrid,
    eps_hat: &LatentGrid,
    t: Timestep,
    t_prev: Timestep,
    sched: &NoiseSchedule,
) -> Result<LatentGrid> {
    if sched.kind() != ScheduleKind::VariancePreserving {
        return Err(Error::domain("DDIM needs a variance-preserving schedule"));
    }
    check_order(t, t_prev)?;
    sched.check_time(t_prev)?;
    let z0 = predict_z0(z_t, eps_hat, t, sched)?;
    let a_prev = sched.alpha_at(t_prev)?;
    z0.lincomb(math::sqrt(a_prev), eps_hat, math::sqrt(1.0 - a_prev))
}

/// Euler step along a flow-matching velocity: `z_t + (t_prev - t) v`.
pub fn euler_flow_step(
    z_t: &LatentGrid,
    v_hat: &LatentGrid,
    t: Timestep,
    t_prev: Timestep,
) -> Result<LatentGrid> {
    check_order(t, t_prev)?;
    if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&t_prev) {
        return Err(Error::domain("flow timesteps must lie in [0, 1]"));
    }
    z_t.lincomb(1.0, v_hat, t_prev - t)
}

/// Dispatches to [`ddim_step`] or [`euler_flow_step`] by schedule kind.
pub fn sampler_step(
    z_t: &LatentGrid,
    pred: &LatentGrid,
    t: Timestep,
    t_prev: Timestep,
    sched: &NoiseSchedule,
) -> Result<LatentGrid> {
    match sched.kind() {
        ScheduleKind::VariancePreserving => ddim_step(z_t, pred, t, t_prev, sched),
        ScheduleKind::FlowMatching => euler_flow_step(z_t, pred, t, t_prev),
    }
}
