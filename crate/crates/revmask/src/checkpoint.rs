//! Checkpoint directory format.
//!
//! A checkpoint is a directory holding a structured-text manifest
//! (`manifest.toml`), one binary blob per tensor (little-endian f32,
//! row-major, under `tensors/`), and `MANIFEST.sha256` with the hash of
//! the manifest bytes. The manifest records a hash per blob, so any
//! truncation or edit — of a blob or of the manifest itself — surfaces as
//! a corrupt-checkpoint error instead of garbage parameters.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{hex_string, NamedTensor, ParameterSet};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_HASH_FILE: &str = "MANIFEST.sha256";
pub const TENSOR_DIR: &str = "tensors";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamManifest {
    format: String,
    kind: String,
    label: String,
    tensors: Vec<TensorEntry>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

pub fn tensor_bytes(data: &[f32]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn write_blob(path: &Path, data: &[f32]) -> Result<String> {
    let bytes = tensor_bytes(data);
    let hash = sha256_bytes(&bytes);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(hash)
}

pub fn read_blob(path: &Path, expected_elems: usize, expected_sha256: &str) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| {
        Error::CorruptCheckpoint(format!("cannot read blob {}: {e}", path.display()))
    })?;
    if sha256_bytes(&bytes) != expected_sha256 {
        return Err(Error::CorruptCheckpoint(format!(
            "blob hash mismatch for {}",
            path.display()
        )));
    }
    if bytes.len() != expected_elems * 4 {
        return Err(Error::CorruptCheckpoint(format!(
            "blob {} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected_elems * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Write tensors as blobs under `dir/tensors/` and return manifest entries.
pub fn write_tensor_blobs(dir: &Path, tensors: &[NamedTensor]) -> Result<Vec<TensorEntry>> {
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        let file = format!("{TENSOR_DIR}/{}.bin", t.name);
        let hash = write_blob(&dir.join(&file), &t.data)?;
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            file,
            sha256: hash,
        });
    }
    Ok(entries)
}

pub fn read_tensor_blobs(dir: &Path, entries: &[TensorEntry]) -> Result<Vec<NamedTensor>> {
    let mut tensors = Vec::with_capacity(entries.len());
    for e in entries {
        let elems: usize = e.shape.iter().product();
        let data = read_blob(&dir.join(&e.file), elems, &e.sha256)?;
        tensors.push(NamedTensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data,
        });
    }
    Ok(tensors)
}

/// Serialize the manifest, write it, and record its hash alongside.
pub fn write_manifest_with_hash(dir: &Path, manifest_toml: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST_FILE), manifest_toml.as_bytes())?;
    fs::write(dir.join(MANIFEST_HASH_FILE), sha256_bytes(manifest_toml.as_bytes()))?;
    Ok(())
}

/// Load manifest bytes after validating them against `MANIFEST.sha256`.
pub fn read_manifest_validated(dir: &Path) -> Result<String> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&manifest_path).map_err(|e| {
        Error::CorruptCheckpoint(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let recorded = fs::read_to_string(dir.join(MANIFEST_HASH_FILE)).map_err(|e| {
        Error::CorruptCheckpoint(format!("missing manifest hash: {e}"))
    })?;
    let actual = sha256_bytes(&bytes);
    if recorded.trim() != actual {
        return Err(Error::CorruptCheckpoint("manifest hash mismatch".into()));
    }
    String::from_utf8(bytes).map_err(|_| Error::CorruptCheckpoint("manifest is not UTF-8".into()))
}

/// Store a bare parameter set (used for extractor / embedder weights).
pub fn save_parameter_set(dir: &Path, params: &ParameterSet, label: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tensors = write_tensor_blobs(dir, &params.tensors)?;
    let manifest = ParamManifest {
        format: "revmask-checkpoint-v1".into(),
        kind: "parameter-set".into(),
        label: label.into(),
        tensors,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    write_manifest_with_hash(dir, &text)
}

pub fn load_parameter_set(dir: &Path) -> Result<ParameterSet> {
    let text = read_manifest_validated(dir)?;
    let manifest: ParamManifest = toml::from_str(&text)
        .map_err(|e| Error::CorruptCheckpoint(format!("manifest parse: {e}")))?;
    if manifest.kind != "parameter-set" {
        return Err(Error::CorruptCheckpoint(format!(
            "expected a parameter-set checkpoint, found kind {}",
            manifest.kind
        )));
    }
    let tensors = read_tensor_blobs(dir, &manifest.tensors)?;
    Ok(ParameterSet { tensors })
}
