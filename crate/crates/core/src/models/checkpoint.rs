//! `model.json` manifest plus `model.bin` little-endian `f32` blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Model, Param};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "1";
const MANIFEST_FILE: &str = "model.json";
const BLOB_FILE: &str = "model.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `model.bin`.
    pub offset: usize,
    /// Length in bytes.
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: String,
    pub architecture: String,
    pub parameters: Vec<ParamEntry>,
    pub blob_bytes: usize,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

/// Writes `model.json` and `model.bin` into `dir`, creating it if needed.
pub fn save_checkpoint(
    model: &Model,
    dir: impl AsRef<Path>,
    metadata: BTreeMap<String, serde_json::Value>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(model.num_parameters() * 4);
    let mut parameters = Vec::new();
    for p in model.params() {
        let offset = blob.len();
        for v in &p.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        parameters.push(ParamEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset,
            bytes: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION.to_string(),
        architecture: model.architecture().id().to_string(),
        parameters,
        blob_bytes: blob.len(),
        metadata,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(BLOB_FILE);
    fs::write(&bpath, &blob).map_err(|e| Error::io(&bpath, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| corrupt(format!("{}: {e}", path.display())))
}

/// Loads a checkpoint pair, validating version, architecture, layout and
/// blob length.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(Model, Manifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "format version {:?} is not supported (expected {FORMAT_VERSION:?})",
            manifest.format_version
        )));
    }
    let arch: Architecture = manifest.architecture.parse().map_err(|_| {
        corrupt(format!(
            "unknown architecture id {:?}",
            manifest.architecture
        ))
    })?;
    let layout = arch.layout();
    if layout.len() != manifest.parameters.len() {
        return Err(corrupt(format!(
            "{arch} has {} parameters, manifest lists {}",
            layout.len(),
            manifest.parameters.len()
        )));
    }

    let bpath = dir.join(BLOB_FILE);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    if blob.len() != manifest.blob_bytes {
        return Err(corrupt(format!(
            "blob is {} bytes, manifest expects {}",
            blob.len(),
            manifest.blob_bytes
        )));
    }

    let mut cursor = 0;
    let mut params = Vec::with_capacity(layout.len());
    for ((name, shape), entry) in layout.iter().zip(&manifest.parameters) {
        if entry.name != *name || entry.shape != *shape {
            return Err(corrupt(format!(
                "expected parameter {name} {shape:?}, found {} {:?}",
                entry.name, entry.shape
            )));
        }
        let expected_bytes = shape.iter().product::<usize>() * 4;
        if entry.offset != cursor || entry.bytes != expected_bytes {
            return Err(corrupt(format!(
                "parameter {name} at offset {} with {} bytes does not tile the blob",
                entry.offset, entry.bytes
            )));
        }
        let data = blob[cursor..cursor + expected_bytes]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        cursor += expected_bytes;
        params.push(Param {
            name: name.to_string(),
            shape: shape.clone(),
            data,
        });
    }
    if cursor != blob.len() {
        return Err(corrupt(format!(
            "parameters cover {cursor} bytes of a {}-byte blob",
            blob.len()
        )));
    }
    let model = Model::from_params(arch, params)?;
    Ok((model, manifest))
}
