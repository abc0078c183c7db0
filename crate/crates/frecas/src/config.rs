//! Run configuration.
//!
//! A TOML document whose keys mirror [`RunConfig`]; every key is optional.
//!
//! ```toml
//! preset = "sdxl-x4"      # or an inline [plan] table, not both
//! base_side = 32
//! stages = 2              # keep only the first stages of the plan
//! seed = 7
//! condition = 0
//! codec = "haar1"         # or "identity"
//! out = "run1"
//! verify = true
//! patch = 4               # CA patch size; default latent side / 8
//!
//! [bank]
//! path = "bank_dir"       # or the procedural fields below
//! seed = 0
//! items = 100
//! classes = 4
//! channels = 4
//! side = 64             # default: the plan's final latent side
//! white_noise = false
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use frecas_core::bank::procedural::{procedural_bank, white_noise_bank, ProceduralSpec};
use frecas_core::bank::LatentBank;
use frecas_core::cascade::{StagePlan, DEFAULT_BASE_SIDE};
use frecas_core::codec::LatentCodec;
use serde::{Deserialize, Serialize};

use crate::dump::load_bank;
use crate::error::{CliError, Result};

pub const DEFAULT_PRESET: &str = "sdxl-x4";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    /// Bank directory; when set the procedural fields are ignored.
    pub path: Option<PathBuf>,
    pub seed: u64,
    pub items: usize,
    pub classes: usize,
    pub channels: usize,
    pub side: Option<usize>,
    pub white_noise: bool,
}

impl Default for BankConfig {
    fn default() -> Self {
        let spec = ProceduralSpec::default();
        Self {
            path: None,
            seed: spec.seed,
            items: spec.items,
            classes: spec.classes,
            channels: spec.channels,
            side: None,
            white_noise: false,
        }
    }
}

impl BankConfig {
    /// Copy with `side` filled in from `default_side` when unset.
    pub fn resolved(&self, default_side: usize) -> Self {
        Self {
            side: Some(self.side.unwrap_or(default_side)),
            ..self.clone()
        }
    }

    pub fn procedural_spec(&self, default_side: usize) -> ProceduralSpec {
        ProceduralSpec {
            seed: self.seed,
            items: self.items,
            classes: self.classes,
            channels: self.channels,
            side: self.side.unwrap_or(default_side),
        }
    }

    pub fn load(&self, default_side: usize) -> Result<LatentBank> {
        let spec = self.procedural_spec(default_side);
        match &self.path {
            Some(dir) => load_bank(dir),
            None if self.white_noise => Ok(white_noise_bank(&spec)?),
            None => Ok(procedural_bank(&spec)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub plan: Option<StagePlan>,
    pub base_side: usize,
    pub stages: Option<usize>,
    pub seed: u64,
    pub condition: u32,
    pub codec: LatentCodec,
    pub bank: BankConfig,
    pub out: PathBuf,
    pub verify: bool,
    pub patch: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            plan: None,
            base_side: DEFAULT_BASE_SIDE,
            stages: None,
            seed: 0,
            condition: 0,
            codec: LatentCodec::default(),
            bank: BankConfig::default(),
            out: PathBuf::from("out"),
            verify: false,
            patch: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// Name of the preset in effect, if the plan comes from one.
    pub fn preset_name(&self) -> Option<&str> {
        match (&self.plan, &self.preset) {
            (Some(_), _) => None,
            (None, Some(p)) => Some(p),
            (None, None) => Some(DEFAULT_PRESET),
        }
    }

    pub fn resolve_plan(&self) -> Result<StagePlan> {
        let usage = |e: frecas_core::Error| CliError::Usage(e.to_string());
        let plan = match (&self.plan, &self.preset) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage(
                    "config sets both `preset` and `plan`".into(),
                ))
            }
            (Some(plan), None) => {
                plan.validate().map_err(usage)?;
                plan.clone()
            }
            (None, preset) => {
                StagePlan::preset(preset.as_deref().unwrap_or(DEFAULT_PRESET), self.base_side)
                    .map_err(usage)?
            }
        };
        match self.stages {
            Some(k) => plan.truncated(k).map_err(usage),
            None => Ok(plan),
        }
    }

    /// The configured bank; procedural banks default to the plan's final
    /// latent side.
    pub fn load_bank(&self, plan: &StagePlan) -> Result<LatentBank> {
        self.bank.load(plan.final_resolution().side())
    }
}
