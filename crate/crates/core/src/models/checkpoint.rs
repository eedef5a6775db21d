//! Checkpoint directories: `metadata.json` plus little-endian f64 weights
//! in `params.bin`, in tensor order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Model, ModelConfig, ProviderRegistry};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const METADATA_FILE: &str = "metadata.json";
const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub train_set: String,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub schema_version: u32,
    pub architecture: Architecture,
    pub config: ModelConfig,
    pub config_hash: String,
    pub freezing_map: BTreeMap<String, bool>,
    pub provenance: Provenance,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &Model, provenance: &Provenance, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let meta = CheckpointMetadata {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        architecture: model.architecture(),
        config: model.config.clone(),
        config_hash: model.config.hash(),
        freezing_map: model.params.freezing_map().clone(),
        provenance: provenance.clone(),
        tensors: model
            .params
            .tensors()
            .iter()
            .map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() })
            .collect(),
    };
    let mut bytes = Vec::new();
    for t in model.params.tensors() {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta_path = dir.join(METADATA_FILE);
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?)
        .map_err(|e| Error::io(format!("writing {}", meta_path.display()), e))?;
    let params_path = dir.join(PARAMS_FILE);
    fs::write(&params_path, bytes).map_err(|e| Error::io(format!("writing {}", params_path.display()), e))
}

pub fn read_metadata(dir: &Path) -> Result<CheckpointMetadata> {
    let path = dir.join(METADATA_FILE);
    if !path.exists() {
        return Err(Error::MissingPath(path));
    }
    let text = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let meta: CheckpointMetadata = serde_json::from_slice(&text)?;
    if meta.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "checkpoint schema version {} is not supported",
            meta.schema_version
        )));
    }
    let actual = meta.config.hash();
    if actual != meta.config_hash {
        return Err(Error::ConfigHashMismatch { stored: meta.config_hash, expected: actual });
    }
    Ok(meta)
}

/// Restores a model. When `expected` is given, the stored config must hash
/// to the same value.
pub fn load_checkpoint(
    dir: &Path,
    registry: &ProviderRegistry,
    expected: Option<&ModelConfig>,
) -> Result<(Model, CheckpointMetadata)> {
    let meta = read_metadata(dir)?;
    if let Some(cfg) = expected {
        let want = cfg.hash();
        if want != meta.config_hash {
            return Err(Error::ConfigHashMismatch { stored: meta.config_hash, expected: want });
        }
    }
    let mut model = Model::new(meta.config.clone(), 0, registry)?;
    let path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let total: usize = model.params.tensors().iter().map(|t| t.data.len()).sum();
    if bytes.len() != total * 8 || meta.tensors.len() != model.params.len() {
        return Err(Error::shape("checkpoint weights", total * 8, bytes.len()));
    }
    let mut chunks = bytes.chunks_exact(8);
    for (t, entry) in model.params.tensors_mut().iter_mut().zip(&meta.tensors) {
        if t.name != entry.name || t.shape != entry.shape {
            return Err(Error::shape(
                "checkpoint tensor",
                format!("{} {:?}", t.name, t.shape),
                format!("{} {:?}", entry.name, entry.shape),
            ));
        }
        for v in t.data.iter_mut() {
            *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    }
    for (group, trainable) in &meta.freezing_map {
        model.params.set_trainable(group, *trainable);
    }
    Ok((model, meta))
}
