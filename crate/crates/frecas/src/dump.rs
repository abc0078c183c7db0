//! Raw grid dumps and on-disk banks.
//!
//! A grid file is the 4-byte magic `FRCG`, little-endian `u32` channels,
//! height and width, then every value as a little-endian `f32` in
//! channel-major, row-major order.
//!
//! A bank directory holds `bank.toml` listing one `[[items]]` entry per
//! latent (`file`, `class_id`, `weight`) next to the grid files.

use std::fs;
use std::path::Path;

use frecas_core::bank::{BankItem, LatentBank};
use frecas_core::LatentGrid;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const GRID_MAGIC: [u8; 4] = *b"FRCG";
const HEADER_LEN: usize = 16;

pub const BANK_MANIFEST: &str = "bank.toml";

pub fn encode_grid(g: &LatentGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * g.len());
    out.extend_from_slice(&GRID_MAGIC);
    for dim in [g.channels(), g.height(), g.width()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in g.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<LatentGrid, String> {
    if bytes.len() < HEADER_LEN || bytes[..4] != GRID_MAGIC {
        return Err("not a grid dump".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let (c, h, w) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * c * h * w {
        return Err(format!(
            "expected {} data bytes for {c}x{h}x{w}, found {}",
            4 * c * h * w,
            body.len()
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    LatentGrid::new(c, h, w, data).map_err(|e| e.to_string())
}

pub fn write_grid(path: &Path, g: &LatentGrid) -> Result<()> {
    fs::write(path, encode_grid(g)).map_err(|e| CliError::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<LatentGrid> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_grid(&bytes).map_err(|msg| CliError::format(path, msg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankEntry {
    pub file: String,
    pub class_id: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankManifest {
    pub items: Vec<BankEntry>,
}

pub fn save_bank(dir: &Path, bank: &LatentBank) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut items = Vec::with_capacity(bank.len());
    for (i, item) in bank.items().iter().enumerate() {
        let file = format!("item_{i:04}.frcg");
        write_grid(&dir.join(&file), &item.latent)?;
        items.push(BankEntry {
            file,
            class_id: item.class_id,
            weight: item.weight,
        });
    }
    let text = toml::to_string(&BankManifest { items })
        .map_err(|e| CliError::format(dir, e.to_string()))?;
    let path = dir.join(BANK_MANIFEST);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

pub fn load_bank(dir: &Path) -> Result<LatentBank> {
    let path = dir.join(BANK_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: BankManifest =
        toml::from_str(&text).map_err(|e| CliError::format(&path, e.to_string()))?;
    let items = manifest
        .items
        .iter()
        .map(|entry| {
            Ok(BankItem {
                latent: read_grid(&dir.join(&entry.file))?,
                class_id: entry.class_id,
                weight: entry.weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LatentBank::new(items).map_err(|e| CliError::format(&path, e.to_string()))
}
