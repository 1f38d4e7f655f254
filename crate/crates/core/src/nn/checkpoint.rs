//! Versioned JSON checkpoints. Tensors are stored as base64 of their
//! little-endian f64 bytes, so a save/load round trip is exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::config::{NetworkConfig, Task};
use super::model::QaModel;
use super::params::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "pkt-pcqa-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Task,
    /// Epoch the stored weights come from (best validation epoch).
    pub epoch: usize,
    pub seed: u64,
    /// MOS range predictions are denormalized into.
    pub mos_scale: (f64, f64),
    /// Normalized-MOS boundaries `(bad|fair, fair|excellent)` learned from the
    /// training split, used to report a level from a regression output.
    pub level_thresholds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: QaModel,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: NetworkConfig,
    meta: CheckpointMeta,
    params: Vec<TensorRecord>,
    buffers: Vec<TensorRecord>,
}

fn encode(store: &ParamStore) -> Vec<TensorRecord> {
    store
        .iter()
        .map(|(name, t)| {
            let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            TensorRecord {
                name: name.to_string(),
                shape: t.shape.clone(),
                data: STANDARD.encode(bytes),
            }
        })
        .collect()
}

fn decode(records: Vec<TensorRecord>) -> Result<ParamStore> {
    let mut store = ParamStore::default();
    for r in records {
        let bytes = STANDARD
            .decode(r.data.as_bytes())
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", r.name)))?;
        if bytes.len() % 8 != 0 || bytes.len() / 8 != r.shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("{}: payload does not match shape {:?}", r.name, r.shape)));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.push(r.name, Tensor { shape: r.shape, data });
    }
    Ok(store)
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            meta: self.meta.clone(),
            params: encode(&self.model.params),
            buffers: encode(&self.model.buffers),
        };
        serde_json::to_string_pretty(&file).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format `{}`", file.format)));
        }
        if file.version > CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
        }
        let model = QaModel::from_parts(file.config, decode(file.params)?, decode(file.buffers)?)?;
        Ok(Self { model, meta: file.meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
