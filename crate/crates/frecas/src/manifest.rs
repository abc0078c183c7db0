use std::fs;
use std::path::Path;

use frecas_core::cascade::{StagePlan, StageRecord};
use frecas_core::codec::LatentCodec;
use serde::{Deserialize, Serialize};

use crate::config::BankConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Written next to the outputs of every `sample` run. Paths are relative to
/// the run directory so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub condition: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub codec: LatentCodec,
    pub cost_units: f64,
    /// Cost of one stage at the target resolution with the same step budget.
    pub direct_cost_units: f64,
    pub proxy_speedup: f64,
    pub outputs: Outputs,
    /// Bank source with the side actually used.
    pub bank: BankConfig,
    pub plan: StagePlan,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Outputs {
    pub image_raw: String,
    pub latent_raw: String,
    pub images: Vec<String>,
    pub psd_csv: String,
    pub stage_dumps: Vec<String>,
}

impl RunManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("manifest: {e}")))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        toml::from_str(&text).map_err(|e| CliError::format(&path, e.to_string()))
    }
}
