//! Noise schedules, SNR arithmetic, forward diffusion and the timestep
//! shifts that keep SNR consistent when a latent changes resolution.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::math;

/// Continuous diffusion time. `[0, T]` for variance-preserving schedules
/// (fractional values allowed), `[0, 1]` for flow matching.
pub type Timestep = f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScheduleKind {
    VariancePreserving,
    FlowMatching,
}

/// Either a tabulated cumulative-alpha curve (`z_t = sqrt(a) z0 + sqrt(1-a) eps`)
/// or the straight flow-matching path (`z_t = (1-t) z0 + t eps`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    /// `alphas[t]` for integer `t = 0..=T`; empty for flow matching.
    alphas: Vec<f64>,
}

impl NoiseSchedule {
    /// `alpha_t = prod_{k=1..t} (1 - beta_k)` with `beta` linear from
    /// `beta_start` (k = 1) to `beta_end` (k = T).
    pub fn linear_beta(train_timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if train_timesteps < 2 {
            return Err(Error::invalid("need at least two training timesteps"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid("betas must satisfy 0 < start <= end < 1"));
        }
        let steps = train_timesteps as f64 - 1.0;
        let mut alphas = Vec::with_capacity(train_timesteps + 1);
        alphas.push(1.0);
        let mut acc = 1.0;
        for k in 0..train_timesteps {
            let beta = beta_start + (beta_end - beta_start) * k as f64 / steps;
            acc *= 1.0 - beta;
            alphas.push(acc);
        }
        Self::from_alphas(alphas)
    }

    /// Linear beta from 1e-4 to 0.02 over 1000 steps.
    pub fn sd_default() -> Self {
        Self::linear_beta(1000, 1e-4, 0.02).expect("default schedule is valid")
    }

    /// Schedule from an explicit curve `alphas[0..=T]`.
    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() < 2 {
            return Err(Error::invalid("alpha curve needs at least two points"));
        }
        if alphas[0] != 1.0 {
            return Err(Error::invalid("alpha_0 must be 1"));
        }
        if alphas.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::invalid("alpha curve must be strictly decreasing"));
        }
        let last = alphas[alphas.len() - 1];
        if !(last > 0.0) || !last.is_finite() {
            return Err(Error::invalid("alpha_T must be positive"));
        }
        Ok(Self {
            kind: ScheduleKind::VariancePreserving,
            alphas,
        })
    }

    pub fn flow_matching() -> Self {
        Self {
            kind: ScheduleKind::FlowMatching,
            alphas: Vec::new(),
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// `T` for VP schedules, 1 for flow matching.
    pub fn max_time(&self) -> f64 {
        match self.kind {
            ScheduleKind::VariancePreserving => (self.alphas.len() - 1) as f64,
            ScheduleKind::FlowMatching => 1.0,
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub(crate) fn check_time(&self, t: Timestep) -> Result<()> {
        if !(t >= 0.0 && t <= self.max_time()) {
            return Err(Error::domain(format!(
                "timestep {t} outside [0, {}]",
                self.max_time()
            )));
        }
        Ok(())
    }

    fn require_vp(&self) -> Result<()> {
        if self.kind != ScheduleKind::VariancePreserving {
            return Err(Error::domain(
                "operation needs a variance-preserving schedule",
            ));
        }
        Ok(())
    }

    /// `alpha_t`, linearly interpolated between integer timesteps.
    pub fn alpha_at(&self, t: Timestep) -> Result<f64> {
        self.require_vp()?;
        self.check_time(t)?;
        let k = math::floor(t) as usize;
        if k + 1 >= self.alphas.len() {
            return Ok(self.alphas[self.alphas.len() - 1]);
        }
        let frac = t - k as f64;
        let (a0, a1) = (self.alphas[k], self.alphas[k + 1]);
        Ok(a0 + frac * (a1 - a0))
    }

    /// `alpha / (1 - alpha)`; undefined at `t = 0`.
    pub fn snr(&self, t: Timestep) -> Result<f64> {
        let a = self.alpha_at(t)?;
        if t == 0.0 || a >= 1.0 {
            return Err(Error::domain("SNR is infinite at t = 0"));
        }
        Ok(snr_of_alpha(a))
    }

    /// Inverse of [`alpha_at`](Self::alpha_at) on `[alpha_T, 1]`.
    ///
    /// Binary search for the bracketing segment, then the exact linear
    /// inverse inside it.
    pub fn alpha_inverse(&self, alpha: f64) -> Result<Timestep> {
        self.require_vp()?;
        let last = self.alphas.len() - 1;
        if !(alpha <= 1.0 && alpha >= self.alphas[last]) {
            return Err(Error::domain(format!(
                "alpha {alpha} outside the schedule range [{}, 1]",
                self.alphas[last]
            )));
        }
        // Largest k with alphas[k] >= alpha.
        let (mut lo, mut hi) = (0usize, last);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.alphas[mid] >= alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if self.alphas[hi] >= alpha {
            return Ok(hi as f64);
        }
        let (a0, a1) = (self.alphas[lo], self.alphas[hi]);
        Ok(lo as f64 + (a0 - alpha) / (a0 - a1))
    }

    /// Coefficients `(signal, noise)` with `z_t = signal * z0 + noise * eps`.
    pub fn coefficients(&self, t: Timestep) -> Result<(f64, f64)> {
        self.check_time(t)?;
        match self.kind {
            ScheduleKind::VariancePreserving => {
                let a = self.alpha_at(t)?;
                Ok((math::sqrt(a), math::sqrt(1.0 - a)))
            }
            ScheduleKind::FlowMatching => Ok((1.0 - t, t)),
        }
    }

    /// Forward diffusion of `z0` to time `t` with the given noise.
    pub fn diffuse(&self, z0: &LatentGrid, t: Timestep, noise: &LatentGrid) -> Result<LatentGrid> {
        let (signal, sigma) = self.coefficients(t)?;
        z0.lincomb(signal, noise, sigma)
    }

    /// Entry timestep of the next stage for a VP schedule.
    ///
    /// `ratio = s_prev / s_next` in `(0, 1]`. Solves
    /// `snr(F) = snr(L) * ratio^gamma` in closed form for `alpha_F` and
    /// inverts the schedule.
    pub fn shift_timestep_vp(&self, last: Timestep, ratio: f64, gamma: f64) -> Result<Timestep> {
        self.require_vp()?;
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::domain(format!(
                "resolution ratio {ratio} outside (0, 1]"
            )));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::domain(format!(
                "gamma {gamma} must be finite and >= 0"
            )));
        }
        if !(last > 0.0 && last <= self.max_time()) {
            return Err(Error::domain(format!(
                "last timestep {last} outside (0, T]"
            )));
        }
        let r = math::powf(ratio, gamma);
        if r == 1.0 {
            return Ok(last);
        }
        let alpha_last = self.alpha_at(last)?;
        let target = shifted_alpha(alpha_last, r);
        self.alpha_inverse(target)
    }
}

/// `alpha / (1 - alpha)`.
pub fn snr_of_alpha(alpha: f64) -> f64 {
    alpha / (1.0 - alpha)
}

/// The alpha whose SNR is `r` times that of `alpha`:
/// `r * alpha / (1 + (r - 1) * alpha)`.
pub fn shifted_alpha(alpha: f64, r: f64) -> f64 {
    r * alpha / (1.0 + (r - 1.0) * alpha)
}

/// Flow-matching counterpart of [`NoiseSchedule::shift_timestep_vp`]:
/// `F = k L / (1 + (k - 1) L)` with `k = sqrt(scale)` and
/// `scale = s_next / s_prev`.
///
/// The map is Moebius in `L` with fixed points 0 and 1, so a shift with
/// `scale` followed by one with `1 / scale` returns `L`. Any positive scale
/// is accepted for that reason; cascades only use `scale >= 1`.
pub fn shift_timestep_flow(last: Timestep, scale: f64) -> Result<Timestep> {
    if !(0.0..=1.0).contains(&last) {
        return Err(Error::domain(format!(
            "flow timestep {last} outside [0, 1]"
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::domain(format!("scale {scale} must be positive")));
    }
    let k = math::sqrt(scale);
    Ok(k * last / (1.0 + (k - 1.0) * last))
}
