//! Stage plans, the built-in presets and the evaluation-cost proxy.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Resolution;
use crate::schedule::{ScheduleKind, Timestep};

/// One resolution level of a cascade.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageSpec {
    /// Latent side of this stage.
    pub resolution: Resolution,
    pub steps: usize,
    /// Timestep of the stage's last latent; 0 for the final stage.
    pub last_timestep: Timestep,
    /// Guidance weight of the band already present at the previous stage
    /// (and the plain CFG weight of stage 0).
    pub w_low: f64,
    /// Guidance weight of the newly opened frequency band.
    pub w_high: f64,
    /// Weight of the reused cross-attention map.
    pub w_c: f64,
}

/// Ordered stages of increasing resolution plus the transition settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StagePlan {
    pub stages: Vec<StageSpec>,
    /// SNR exponent of the VP timestep shift; unused by flow plans.
    pub gamma: f64,
    pub schedule_kind: ScheduleKind,
    /// Training resolution `s_0`; one evaluation at side `s` costs
    /// `(s / s_0)^2` units.
    pub base: Resolution,
}

/// Names of the built-in presets.
pub const PRESET_NAMES: [&str; 5] = ["sd21-x4", "sd21-x16", "sdxl-x4", "sdxl-x16", "sd3-x4"];

/// Training timesteps assumed when reading preset `L` values.
const TRAIN_TIMESTEPS: f64 = 1000.0;

/// Default latent side standing in for the training resolution.
pub const DEFAULT_BASE_SIDE: usize = 32;

/// One row of the preset table: stage count is `steps.len()`.
struct PresetRow {
    steps: &'static [usize],
    last: &'static [f64],
    gamma: f64,
    w_low: f64,
    w_high: f64,
    w_c: f64,
    kind: ScheduleKind,
}

fn preset_row(name: &str) -> Option<PresetRow> {
    use ScheduleKind::*;
    let row = match name {
        "sd21-x4" => PresetRow {
            steps: &[40, 10],
            last: &[100.0],
            gamma: 3.0,
            w_low: 7.5,
            w_high: 45.0,
            w_c: 0.6,
            kind: VariancePreserving,
        },
        "sd21-x16" => PresetRow {
            steps: &[30, 10, 10],
            last: &[200.0, 200.0],
            gamma: 3.0,
            w_low: 7.5,
            w_high: 35.0,
            w_c: 0.4,
            kind: VariancePreserving,
        },
        "sdxl-x4" => PresetRow {
            steps: &[40, 10],
            last: &[200.0],
            gamma: 1.5,
            w_low: 7.5,
            w_high: 35.0,
            w_c: 0.6,
            kind: VariancePreserving,
        },
        "sdxl-x16" => PresetRow {
            steps: &[30, 5, 15],
            last: &[400.0, 200.0],
            gamma: 2.0,
            w_low: 7.5,
            w_high: 35.0,
            w_c: 0.6,
            kind: VariancePreserving,
        },
        // Flow preset: L is given on the 1000-step training scale and
        // normalized to [0, 1].
        "sd3-x4" => PresetRow {
            steps: &[20, 8],
            last: &[50.0],
            gamma: 0.0,
            w_low: 7.0,
            w_high: 35.0,
            w_c: 0.5,
            kind: FlowMatching,
        },
        _ => return None,
    };
    Some(row)
}

impl StagePlan {
    /// A built-in preset with stage sides `base * 2^i`.
    pub fn preset(name: &str, base_side: usize) -> Result<Self> {
        let row =
            preset_row(name).ok_or_else(|| Error::invalid(format!("unknown preset {name:?}")))?;
        let base = Resolution::new(base_side)?;
        let scale = match row.kind {
            ScheduleKind::VariancePreserving => 1.0,
            ScheduleKind::FlowMatching => 1.0 / TRAIN_TIMESTEPS,
        };
        let n = row.steps.len();
        let stages = (0..n)
            .map(|i| {
                Ok(StageSpec {
                    resolution: Resolution::new(base_side << i)?,
                    steps: row.steps[i],
                    last_timestep: if i + 1 < n { row.last[i] * scale } else { 0.0 },
                    w_low: row.w_low,
                    w_high: row.w_high,
                    w_c: row.w_c,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let plan = Self {
            stages,
            gamma: row.gamma,
            schedule_kind: row.kind,
            base,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Single-stage sampling at `target` (the DirectInference baseline).
    pub fn direct(
        base: Resolution,
        target: Resolution,
        steps: usize,
        w: f64,
        kind: ScheduleKind,
    ) -> Result<Self> {
        let plan = Self {
            stages: vec![StageSpec {
                resolution: target,
                steps,
                last_timestep: 0.0,
                w_low: w,
                w_high: w,
                w_c: 0.0,
            }],
            gamma: 0.0,
            schedule_kind: kind,
            base,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn final_resolution(&self) -> Resolution {
        self.stages[self.stages.len() - 1].resolution
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }

    /// Number of stages after the first (`N`).
    pub fn additional_stages(&self) -> usize {
        self.stages.len().saturating_sub(1)
    }

    /// The direct baseline at this plan's target with the same total step
    /// budget and CFG weight.
    pub fn direct_baseline(&self) -> Result<Self> {
        Self::direct(
            self.base,
            self.final_resolution(),
            self.total_steps(),
            self.stages[0].w_low,
            self.schedule_kind,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stages.len();
        if n == 0 {
            return Err(Error::invalid("plan needs at least one stage"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma must be finite and >= 0"));
        }
        if self.stages[0].resolution < self.base {
            return Err(Error::invalid("first stage is below the base resolution"));
        }
        let t_max = match self.schedule_kind {
            ScheduleKind::VariancePreserving => TRAIN_TIMESTEPS,
            ScheduleKind::FlowMatching => 1.0,
        };
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 && s.resolution <= self.stages[i - 1].resolution {
                return Err(Error::invalid("stage resolutions must strictly increase"));
            }
            if s.steps == 0 {
                return Err(Error::invalid(format!("stage {i} has zero steps")));
            }
            let last_ok = if i + 1 == n {
                s.last_timestep == 0.0
            } else {
                s.last_timestep > 0.0 && s.last_timestep < t_max
            };
            if !last_ok {
                return Err(Error::invalid(format!(
                    "stage {i} has invalid last timestep {}",
                    s.last_timestep
                )));
            }
            if !(s.w_low.is_finite() && s.w_high.is_finite()) {
                return Err(Error::invalid("guidance weights must be finite"));
            }
            if !(0.0..=1.0).contains(&s.w_c) {
                return Err(Error::invalid("w_c must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Cost of stage `i` in base-resolution evaluations.
    pub fn stage_cost(&self, i: usize) -> f64 {
        let s = &self.stages[i];
        let side = s.resolution.side() as u128;
        let base = self.base.side() as u128;
        (s.steps as u128 * side * side) as f64 / (base * base) as f64
    }

    // ----- ablation helpers ------------------------------------------------

    /// Sets every stage's low-band weight.
    pub fn with_w_low(mut self, w: f64) -> Result<Self> {
        self.stages.iter_mut().for_each(|s| s.w_low = w);
        self.validate().map(|_| self)
    }

    /// Sets every stage's high-band weight.
    pub fn with_w_high(mut self, w: f64) -> Result<Self> {
        self.stages.iter_mut().for_each(|s| s.w_high = w);
        self.validate().map(|_| self)
    }

    pub fn with_w_c(mut self, w_c: f64) -> Result<Self> {
        self.stages.iter_mut().for_each(|s| s.w_c = w_c);
        self.validate().map(|_| self)
    }

    /// Sets the last timestep of every non-final stage.
    pub fn with_last_timestep(mut self, last: Timestep) -> Result<Self> {
        let n = self.stages.len();
        self.stages[..n - 1]
            .iter_mut()
            .for_each(|s| s.last_timestep = last);
        self.validate().map(|_| self)
    }

    /// Keeps the first `stages` stages; the new final stage runs to zero.
    pub fn truncated(mut self, stages: usize) -> Result<Self> {
        if stages == 0 || stages > self.stages.len() {
            return Err(Error::invalid(format!(
                "plan has {} stages, cannot keep {stages}",
                self.stages.len()
            )));
        }
        self.stages.truncate(stages);
        self.stages[stages - 1].last_timestep = 0.0;
        self.validate().map(|_| self)
    }

    /// Rebuilds the plan with `additional` stages between the first and the
    /// target resolution.
    ///
    /// `0` gives the direct baseline. Otherwise sides are spaced linearly
    /// from the first stage to the target (rounded down to even), the first
    /// stage keeps its step count and the remaining steps are split evenly
    /// over the new stages, the remainder going to the last one. Each
    /// non-final stage reuses the first stage's last timestep.
    pub fn with_additional_stages(self, additional: usize) -> Result<Self> {
        if additional == 0 {
            return self.direct_baseline();
        }
        if additional == self.additional_stages() {
            return Ok(self);
        }
        let first = self.stages[0];
        let target = self.final_resolution().side();
        let start = first.resolution.side();
        let total = self.total_steps();
        if total <= first.steps || total - first.steps < additional {
            return Err(Error::invalid("not enough steps for that many stages"));
        }
        let rest = total - first.steps;
        let last_template = self.stages[self.stages.len() - 1];
        let mut stages = vec![first];
        for j in 1..=additional {
            let side = if j == additional {
                target
            } else {
                let s = start + (target - start) * j / additional;
                s & !1
            };
            let mut steps = rest / additional;
            if j == additional {
                steps += rest % additional;
            }
            stages.push(StageSpec {
                resolution: Resolution::new(side)?,
                steps,
                last_timestep: if j == additional {
                    0.0
                } else {
                    first.last_timestep
                },
                ..last_template
            });
        }
        let plan = Self { stages, ..self };
        plan.validate()?;
        Ok(plan)
    }
}

/// `sum_i steps_i * (s_i / s_0)^2` over the plan's stages.
pub fn compute_cost(plan: &StagePlan) -> f64 {
    let base = plan.base.side() as u128;
    let num: u128 = plan
        .stages
        .iter()
        .map(|s| {
            let side = s.resolution.side() as u128;
            s.steps as u128 * side * side
        })
        .sum();
    num as f64 / (base * base) as f64
}
