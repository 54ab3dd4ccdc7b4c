//! On-disk parameter snapshots.
//!
//! A checkpoint is two files: `<stem>.json`, a manifest listing every
//! parameter (name, shape, offset) together with free-form metadata, and
//! `<stem>.bin`, the little-endian `f64` values of all parameters
//! concatenated in lexicographic name order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: u32,
    /// Model family tag, e.g. `ilvm`, `independent`, `autoregressive`.
    pub model_kind: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub blob_sha256: String,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

/// SHA-256 hex digest of the canonical JSON encoding of `value`.
pub fn config_hash(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("json values always encode");
    hex::encode(Sha256::digest(&bytes))
}

pub fn encode_blob(store: &ParamStore) -> (Vec<ParamEntry>, Vec<u8>) {
    let mut entries = Vec::with_capacity(store.len());
    let mut blob = Vec::with_capacity(store.num_scalars() * 8);
    let mut offset = 0;
    for (name, t) in store.iter() {
        entries.push(ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.len();
    }
    (entries, blob)
}

pub fn decode_blob(entries: &[ParamEntry], blob: &[u8]) -> Result<ParamStore> {
    if blob.len() % 8 != 0 {
        return Err(Error::Checkpoint(
            "blob length is not a multiple of 8".into(),
        ));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut store = ParamStore::new();
    let mut expected = 0;
    for e in entries {
        if e.offset != expected || e.offset + e.len > values.len() {
            return Err(Error::Checkpoint(format!("bad extent for `{}`", e.name)));
        }
        let t = Tensor::new(e.shape.clone(), values[e.offset..e.offset + e.len].to_vec())
            .map_err(|_| Error::Checkpoint(format!("shape/len mismatch for `{}`", e.name)))?;
        store.insert(e.name.clone(), t)?;
        expected += e.len;
    }
    if expected != values.len() {
        return Err(Error::Checkpoint("trailing data in blob".into()));
    }
    let names: Vec<&String> = entries.iter().map(|e| &e.name).collect();
    if names.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Checkpoint(
            "parameters not in lexicographic order".into(),
        ));
    }
    Ok(store)
}

pub fn save(
    stem: &Path,
    store: &ParamStore,
    model_kind: &str,
    config: serde_json::Value,
    provenance: serde_json::Value,
) -> Result<CheckpointManifest> {
    let (params, blob) = encode_blob(store);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT,
        model_kind: model_kind.to_string(),
        config_hash: config_hash(&config),
        config,
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        params,
        provenance,
    };
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(blob_path(stem), &blob)?;
    fs::write(manifest_path(stem), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Accepts either the stem or the path of the manifest/blob file.
pub fn load(path: &Path) -> Result<(CheckpointManifest, ParamStore)> {
    let stem = path.with_extension("");
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(manifest_path(&stem))?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported format {}",
            manifest.format
        )));
    }
    let blob = fs::read(blob_path(&stem))?;
    if hex::encode(Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(Error::Checkpoint("blob digest mismatch".into()));
    }
    let store = decode_blob(&manifest.params, &blob)?;
    Ok((manifest, store))
}
