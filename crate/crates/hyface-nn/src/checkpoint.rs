//! Versioned model checkpoints.
//!
//! A checkpoint is a single archive holding every parameter (f32, under
//! `param.`), the rig the model renders with (under `rig.`), and a JSON
//! manifest with the architecture configuration, an architecture hash, and
//! training metadata. Checkpoints are self-contained: loading one needs no
//! other file. Archives are written in sorted order, so save → load → save
//! is byte-identical.

use std::path::Path;
use std::sync::Arc;

use candle_core::{DType, Tensor};
use sha2::{Digest, Sha256};

use hyface_core::archive::{write_archive, Archive, OwnedTensor};
use hyface_core::head::{rig_from_archive, rig_manifest, rig_tensors, HeadModelConfig};

use crate::error::{Error, Result};
use crate::model::{ModelBundle, ModelConfig};
use crate::store::ParamStore;

/// Bumped when the checkpoint layout changes incompatibly.
pub const CHECKPOINT_FORMAT: u64 = 1;

/// Training-state metadata carried alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TrainMeta {
    /// Global seed the run was started with.
    pub seed: u64,
    /// Optimizer steps taken so far (cumulative across stages).
    pub step: u64,
    /// Training stage the checkpoint was written in (1 or 2; 0 = untrained).
    pub stage: u8,
}

/// Hash of the architecture configuration; loading refuses archives whose
/// weights were shaped by a different architecture.
pub fn arch_hash(config: &ModelConfig) -> Result<String> {
    let json = serde_json::to_value(config)
        .map_err(|e| Error::Checkpoint(format!("serializing architecture: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(json.to_string().as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

/// Write `store`'s parameters, the rig and the configuration to `path`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    store: &ParamStore,
    config: &ModelConfig,
    rig: &HeadModelConfig,
    meta: &TrainMeta,
) -> Result<()> {
    config.validate()?;
    config.check_rig(rig)?;
    let mut tensors = rig_tensors(rig, "rig.")?;
    for (name, var) in store.iter() {
        let t = var.as_tensor().to_dtype(DType::F32)?;
        let dims = t.dims().to_vec();
        let data = t.flatten_all()?.to_vec1::<f32>()?;
        tensors.insert(format!("param.{name}"), OwnedTensor::from_f32(dims, &data));
    }
    let arch = serde_json::to_value(config)
        .map_err(|e| Error::Checkpoint(format!("serializing architecture: {e}")))?;
    let meta_json = serde_json::to_value(meta)
        .map_err(|e| Error::Checkpoint(format!("serializing metadata: {e}")))?;
    let manifest = serde_json::json!({
        "kind": "checkpoint",
        "format": CHECKPOINT_FORMAT,
        "arch": arch,
        "arch_hash": arch_hash(config)?,
        "meta": meta_json,
        "n_params": store.len(),
        "rig": rig_manifest(rig),
    });
    Ok(write_archive(path, &tensors, &manifest)?)
}

/// A checkpoint read back from disk, before any modules are built over it.
pub struct LoadedCheckpoint {
    pub store: ParamStore,
    pub config: ModelConfig,
    pub rig: Arc<HeadModelConfig>,
    pub meta: TrainMeta,
}

/// Read a checkpoint archive, verifying kind, format and architecture hash.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let arc = Archive::read(path)?;
    let manifest = &arc.manifest;
    if manifest["kind"] != "checkpoint" {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint (kind = {})",
            path.display(),
            manifest["kind"]
        )));
    }
    if manifest["format"].as_u64() != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint format {} (supported: {CHECKPOINT_FORMAT})",
            path.display(),
            manifest["format"]
        )));
    }
    let config: ModelConfig = serde_json::from_value(manifest["arch"].clone())
        .map_err(|e| Error::Checkpoint(format!("{}: bad architecture: {e}", path.display())))?;
    let stored_hash = manifest["arch_hash"].as_str().unwrap_or_default();
    let computed = arch_hash(&config)?;
    if stored_hash != computed {
        return Err(Error::Checkpoint(format!(
            "{}: architecture hash mismatch (manifest {stored_hash}, computed {computed})",
            path.display()
        )));
    }
    config.validate()?;
    let meta: TrainMeta = serde_json::from_value(manifest["meta"].clone())
        .map_err(|e| Error::Checkpoint(format!("{}: bad metadata: {e}", path.display())))?;
    let rig = rig_from_archive(&arc, "rig.", &manifest["rig"].clone())?;
    config.check_rig(&rig)?;

    let mut store = ParamStore::new(meta.seed);
    let mut n_params = 0usize;
    for name in arc.names() {
        let Some(stripped) = name.strip_prefix("param.") else {
            continue;
        };
        let (dims, data) = arc.f32_vec(name)?;
        let t = Tensor::from_vec(data, dims, &candle_core::Device::Cpu)?;
        store.insert(stripped, &t)?;
        n_params += 1;
    }
    if manifest["n_params"].as_u64() != Some(n_params as u64) {
        return Err(Error::Checkpoint(format!(
            "{}: manifest promises {} parameters, archive has {n_params}",
            path.display(),
            manifest["n_params"]
        )));
    }
    Ok(LoadedCheckpoint {
        store,
        config,
        rig: Arc::new(rig),
        meta,
    })
}

/// Load a checkpoint and rebuild the model over it. Fails if the archive is
/// missing any parameter the architecture requires (a fresh variable would
/// otherwise be silently initialized in its place).
pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelBundle, ParamStore, TrainMeta)> {
    let path = path.as_ref();
    let LoadedCheckpoint {
        mut store,
        config,
        rig,
        meta,
    } = load_checkpoint(path)?;
    let n_loaded = store.len();
    let bundle = ModelBundle::new(&mut store, &config, rig)?;
    if store.len() != n_loaded {
        let fresh = store.len() - n_loaded;
        return Err(Error::Checkpoint(format!(
            "{}: archive is missing {fresh} parameters required by its architecture",
            path.display()
        )));
    }
    Ok((bundle, store, meta))
}
