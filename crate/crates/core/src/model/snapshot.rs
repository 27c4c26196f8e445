//! Binary parameter snapshots: magic, version, JSON header, raw f32 tensors.

use super::network::{Architecture, Table2ImageModel, Variant};
use crate::error::{io_err, Error, Result};
use crate::vif::{VifReport, VIF_MAX};
use nncore::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"T2IS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    variant: Variant,
    n_features: usize,
    n_classes: usize,
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

/// Serialises the model and caller-supplied metadata.
pub fn to_bytes(model: &Table2ImageModel<f32>, meta: &serde_json::Value) -> Vec<u8> {
    let header = Header {
        arch: model.arch,
        variant: model.variant,
        n_features: model.n_features,
        n_classes: model.n_classes,
        tensors: model
            .store
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), shape: p.value.shape().to_vec() })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Table2ImageModel<f32>, serde_json::Value)> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a snapshot file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("snapshot version {version}, expected {VERSION}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| Error::Format("snapshot header truncated".into()))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| Error::Format(format!("snapshot header: {e}")))?;
    let placeholder = VifReport {
        vif: vec![1.0; header.n_features],
        r2: vec![0.0; header.n_features],
        clamped: vec![false; header.n_features],
        vif_max: VIF_MAX,
    };
    let mut model = Table2ImageModel::<f32>::new(
        header.n_features,
        header.n_classes,
        header.variant,
        header.arch,
        Some(&placeholder),
        0,
    )?;
    if model.store.len() != header.tensors.len() {
        return Err(Error::Format("snapshot tensor list does not match the architecture".into()));
    }
    let mut offset = 16 + len;
    let ids: Vec<_> = model.store.ids().collect();
    for (id, entry) in ids.into_iter().zip(&header.tensors) {
        let p = model.store.get_mut(id);
        if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
            return Err(Error::Format(format!("snapshot tensor {} does not match {}", entry.name, p.name)));
        }
        let count = p.value.numel();
        let raw = bytes
            .get(offset..offset + 4 * count)
            .ok_or_else(|| Error::Format(format!("snapshot truncated in {}", entry.name)))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        p.value = Tensor::new(&entry.shape, data)?;
        offset += 4 * count;
    }
    if offset != bytes.len() {
        return Err(Error::Format("trailing bytes after snapshot tensors".into()));
    }
    Ok((model, header.meta))
}

pub fn save(model: &Table2ImageModel<f32>, meta: &serde_json::Value, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model, meta)).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<(Table2ImageModel<f32>, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    from_bytes(&bytes)
}
