//! JSON model checkpoints.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::model::{Autoencoder, ModelConfig, RunningStats};
use super::params::Param;
use super::{NnError, Result};
use crate::graph::AttributeMoments;

pub const MODEL_FORMAT: &str = "graphcd-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    /// Seed the weights were initialised from.
    pub seed: u64,
    pub params: Vec<Param>,
    pub running_stats: Vec<RunningStats>,
    /// Attribute moments the model's inputs were standardised with.
    pub moments: Option<AttributeMoments>,
}

pub fn save_model<W: Write>(model: &Autoencoder, moments: Option<&AttributeMoments>, writer: W) -> Result<()> {
    let ckpt = ModelCheckpoint {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        config: model.config.clone(),
        seed: model.seed,
        params: model.store.params.clone(),
        running_stats: model.running.clone(),
        moments: moments.cloned(),
    };
    serde_json::to_writer(writer, &ckpt).map_err(|e| NnError::Checkpoint(e.to_string()))
}

/// Reads a checkpoint, checking its format, version and parameter shapes.
pub fn load_model<R: Read>(reader: R) -> Result<(Autoencoder, Option<AttributeMoments>)> {
    let value: serde_json::Value = serde_json::from_reader(reader).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let format = value.get("format").and_then(|v| v.as_str());
    let version = value.get("version").and_then(|v| v.as_u64());
    if format != Some(MODEL_FORMAT) || version != Some(MODEL_VERSION as u64) {
        return Err(NnError::Checkpoint(format!(
            "expected {MODEL_FORMAT} version {MODEL_VERSION}, found {} version {}",
            format.unwrap_or("?"),
            version.map_or("?".to_string(), |v| v.to_string())
        )));
    }
    let ckpt: ModelCheckpoint = serde_json::from_value(value).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut model = Autoencoder::new(ckpt.config, ckpt.seed)?;
    if model.store.params.len() != ckpt.params.len() || model.running.len() != ckpt.running_stats.len() {
        return Err(NnError::Checkpoint(
            "parameter count does not match the configuration".into(),
        ));
    }
    for (slot, loaded) in model.store.params.iter_mut().zip(ckpt.params) {
        if slot.name != loaded.name || slot.value.dim() != loaded.value.dim() {
            return Err(NnError::Checkpoint(format!(
                "parameter {} has shape {:?}, expected {} with {:?}",
                loaded.name,
                loaded.value.dim(),
                slot.name,
                slot.value.dim()
            )));
        }
        *slot = loaded;
    }
    if !model.store.all_finite() {
        return Err(NnError::Checkpoint("non-finite parameter".into()));
    }
    model.running = ckpt.running_stats;
    Ok((model, ckpt.moments))
}
