//! Checkpoint container.
//!
//! Layout: the 8-byte magic `CTNXCKPT`, the manifest length as a
//! little-endian u64, the UTF-8 JSON manifest, then every parameter as
//! little-endian IEEE-754 values, concatenated in manifest order. Nothing
//! time-dependent is written, so equal models give equal files.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

const MAGIC: &[u8; 8] = b"CTNXCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub tool: String,
    pub dtype: DType,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
    /// Caller-supplied provenance (seed, fold, epochs, ...).
    #[serde(default)]
    pub metadata: IndexMap<String, serde_json::Value>,
}

impl CheckpointManifest {
    pub fn data_bytes(&self) -> usize {
        self.params.iter().map(ParamEntry::numel).sum::<usize>() * self.dtype.size_of()
    }
}

pub fn to_bytes<T: Element>(model: &Model<T>, metadata: IndexMap<String, serde_json::Value>) -> Result<Vec<u8>> {
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        tool: crate::TOOL_VERSION.to_string(),
        dtype: T::DTYPE,
        config: model.config().clone(),
        params: model
            .params()
            .iter()
            .map(|(n, t)| ParamEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        metadata,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + manifest.data_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params().values() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

/// Splits a checkpoint into its manifest and data section, validating the
/// envelope and the data length.
pub fn parse_bytes(bytes: &[u8]) -> Result<(CheckpointManifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(Error::Checkpoint(format!(
            "truncated manifest: {len} bytes declared, {} present",
            body.len()
        )));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&body[..len])
        .map_err(|e| Error::Checkpoint(format!("corrupt manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let data = &body[len..];
    if data.len() != manifest.data_bytes() {
        return Err(Error::Checkpoint(format!(
            "data section is {} bytes, manifest describes {}",
            data.len(),
            manifest.data_bytes()
        )));
    }
    Ok((manifest, data))
}

fn decode<T: Element>(manifest: &CheckpointManifest, data: &[u8]) -> Result<IndexMap<String, Tensor<T>>> {
    if manifest.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} values, {} requested",
            manifest.dtype,
            T::DTYPE
        )));
    }
    let width = T::DTYPE.size_of();
    let mut offset = 0;
    let mut out = IndexMap::new();
    for entry in &manifest.params {
        let n = entry.numel();
        let values = data[offset..offset + n * width].chunks_exact(width).map(T::read_le).collect();
        offset += n * width;
        let t = Tensor::new(entry.shape.clone(), values).map_err(|e| Error::Checkpoint(format!("{}: {e}", entry.name)))?;
        if out.insert(entry.name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {}", entry.name)));
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `model` to `path` and returns the file size.
pub fn save_checkpoint<T: Element>(
    model: &Model<T>,
    path: impl AsRef<Path>,
    metadata: IndexMap<String, serde_json::Value>,
) -> Result<u64> {
    let path = path.as_ref();
    let bytes = to_bytes(model, metadata)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let bytes = read(path.as_ref())?;
    Ok(parse_bytes(&bytes)?.0)
}

/// Reconstructs a model from a checkpoint, using the configuration it
/// carries.
pub fn load_checkpoint<T: Element>(path: impl AsRef<Path>) -> Result<(Model<T>, CheckpointManifest)> {
    let bytes = read(path.as_ref())?;
    let (manifest, data) = parse_bytes(&bytes)?;
    let params = decode(&manifest, data)?;
    let model = Model::from_params(manifest.config.clone(), params)?;
    Ok((model, manifest))
}

/// Replaces the parameters of `model` with those stored at `path`. Names,
/// shapes and dtype must match exactly; on any error `model` is untouched.
pub fn load_into<T: Element>(model: &mut Model<T>, path: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let bytes = read(path.as_ref())?;
    let (manifest, data) = parse_bytes(&bytes)?;
    let loaded = decode::<T>(&manifest, data)?;
    for (name, t) in model.params() {
        match loaded.get(name) {
            None => {
                let stray = loaded.keys().find(|n| !model.params().contains_key(*n));
                return Err(Error::Checkpoint(match stray {
                    Some(s) => format!("parameter {name} not found in checkpoint (checkpoint has {s} instead)"),
                    None => format!("parameter {name} not found in checkpoint"),
                }));
            }
            Some(l) if l.shape() != t.shape() => {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    l.shape(),
                    t.shape()
                )));
            }
            _ => {}
        }
    }
    if let Some(extra) = loaded.keys().find(|n| !model.params().contains_key(*n)) {
        return Err(Error::Checkpoint(format!("checkpoint parameter {extra} is not in the model")));
    }
    let values: Vec<Vec<T>> = model.params().keys().map(|n| loaded[n].data().to_vec()).collect();
    model.set_values(&values)?;
    Ok(manifest)
}
