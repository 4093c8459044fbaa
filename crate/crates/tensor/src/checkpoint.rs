//! Parameter checkpoints: a JSON manifest naming each tensor with its shape
//! and byte offset, next to one flat little-endian `f32` blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub format: String,
    pub blob: String,
    pub blob_bytes: usize,
    pub tensors: Vec<TensorEntry>,
    /// Free-form model description stored alongside the weights.
    #[serde(default)]
    pub meta: serde_json::Value,
}

const FORMAT_TAG: &str = "prior3d-checkpoint-v1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `store` to `dir` (created if missing).
pub fn save(dir: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut blob = Vec::with_capacity(store.num_scalars() * 4);
    let mut tensors = Vec::with_capacity(store.len());
    for id in store.ids() {
        let t = store.value(id);
        tensors.push(TensorEntry {
            name: store.name(id).to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT_TAG.into(),
        blob: BLOB_FILE.into(),
        blob_bytes: blob.len(),
        tensors,
        meta,
    };
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &blob).map_err(io_err(&blob_path))?;
    let man_path = dir.join(MANIFEST_FILE);
    fs::write(&man_path, serde_json::to_vec_pretty(&manifest)?).map_err(io_err(&man_path))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest, CheckpointError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes)?;
    if manifest.format != FORMAT_TAG {
        return Err(CheckpointError::Corrupt(format!(
            "unknown format tag `{}`",
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Reads every tensor of a checkpoint as `(name, tensor)` pairs in stored order.
pub fn load_tensors(dir: &Path) -> Result<(CheckpointManifest, Vec<(String, Tensor)>), CheckpointError> {
    let manifest = read_manifest(dir)?;
    let path = dir.join(&manifest.blob);
    let blob = fs::read(&path).map_err(io_err(&path))?;
    if blob.len() != manifest.blob_bytes {
        return Err(CheckpointError::Corrupt(format!(
            "blob holds {} bytes, manifest declares {}",
            blob.len(),
            manifest.blob_bytes
        )));
    }
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        if end > blob.len() || e.offset % 4 != 0 {
            return Err(CheckpointError::Corrupt(format!(
                "tensor `{}` spans bytes {}..{end} of {}",
                e.name,
                e.offset,
                blob.len()
            )));
        }
        let data = blob[e.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let t = Tensor::new(e.shape.clone(), data)
            .map_err(|err| CheckpointError::Corrupt(format!("tensor `{}`: {err}", e.name)))?;
        out.push((e.name.clone(), t));
    }
    Ok((manifest, out))
}

/// Overwrites the values of `store` from a checkpoint. Every parameter must
/// be present with the same shape and no extra tensors may appear.
pub fn load_into(dir: &Path, store: &mut ParamStore) -> Result<CheckpointManifest, CheckpointError> {
    let (manifest, tensors) = load_tensors(dir)?;
    if tensors.len() != store.len() {
        return Err(CheckpointError::Mismatch(format!(
            "checkpoint has {} tensors, model has {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store
            .id(&name)
            .ok_or_else(|| CheckpointError::Mismatch(format!("unknown parameter `{name}`")))?;
        if store.value(id).shape() != t.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "`{name}` has shape {:?} in checkpoint, {:?} in model",
                t.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = t;
    }
    Ok(manifest)
}
