//! Versioned binary checkpoint container.
//!
//! Layout:
//!
//! ```text
//! b"RMVLCKPT"            8 bytes magic
//! format version         u32 little-endian
//! header length          u64 little-endian
//! header                 UTF-8 JSON: stage tag, architecture descriptor,
//!                        metadata and a parameter table
//! parameter blobs        f32 little-endian, concatenated in table order
//! ```
//!
//! Each table entry holds `name`, `shape`, `offset` and `len`, both counted in
//! `f32` elements from the start of the blob section.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use tch::{nn, Kind, Tensor};

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"RMVLCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Training provenance stored next to every network's parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Number of completed training iterations.
    pub step: u64,
    pub seed: u64,
    pub config: Option<TrainConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<i64>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    stage: String,
    descriptor: serde_json::Value,
    meta: serde_json::Value,
    params: Vec<ParamEntry>,
}

/// In-memory form of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub stage: String,
    pub descriptor: serde_json::Value,
    pub meta: serde_json::Value,
    pub params: BTreeMap<String, (Vec<i64>, Vec<f32>)>,
}

impl CheckpointFile {
    pub fn from_var_store(
        stage: &str,
        descriptor: &impl Serialize,
        meta: &impl Serialize,
        vs: &nn::VarStore,
    ) -> Result<Self> {
        let mut params = BTreeMap::new();
        for (name, var) in vs.variables() {
            let data = Vec::<f32>::try_from(&var.detach().to_kind(Kind::Float).contiguous().view([-1]))?;
            params.insert(name, (var.size(), data));
        }
        Ok(Self {
            stage: stage.to_string(),
            descriptor: serde_json::to_value(descriptor)?,
            meta: serde_json::to_value(meta)?,
            params,
        })
    }

    pub fn descriptor<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.descriptor.clone())?)
    }

    pub fn meta<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.meta.clone())?)
    }

    pub fn expect_stage(&self, stage: &str) -> Result<()> {
        if self.stage != stage {
            return Err(Error::Checkpoint(format!("expected a '{stage}' checkpoint, found '{}'", self.stage)));
        }
        Ok(())
    }

    /// Copies stored parameters into `vs`; names and shapes must match exactly.
    pub fn load_into(&self, vs: &nn::VarStore) -> Result<()> {
        let vars = vs.variables();
        if vars.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "architecture has {} parameters, checkpoint has {}",
                vars.len(),
                self.params.len()
            )));
        }
        tch::no_grad(|| {
            for (name, mut var) in vars {
                let (shape, data) = self
                    .params
                    .get(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks parameter '{name}'")))?;
                if *shape != var.size() {
                    return Err(Error::Checkpoint(format!(
                        "parameter '{name}' has shape {shape:?} in checkpoint but {:?} in architecture",
                        var.size()
                    )));
                }
                let src = Tensor::from_slice(data).view(shape.as_slice()).to_kind(var.kind());
                var.copy_(&src);
            }
            Ok(())
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.params.len());
        let mut offset = 0u64;
        for (name, (shape, data)) in &self.params {
            entries.push(ParamEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                len: data.len() as u64,
            });
            offset += data.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            stage: self.stage.clone(),
            descriptor: self.descriptor.clone(),
            meta: self.meta.clone(),
            params: entries,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + 4 * offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, data) in self.params.values() {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let blob = &bytes[header_end..];
        let mut params = BTreeMap::new();
        for e in header.params {
            let numel: i64 = e.shape.iter().product();
            if numel as u64 != e.len {
                return Err(Error::Checkpoint(format!("parameter '{}' shape does not match its length", e.name)));
            }
            let start = (e.offset as usize).checked_mul(4).ok_or_else(|| bad("bad offset"))?;
            let end = start + 4 * e.len as usize;
            let raw = blob.get(start..end).ok_or_else(|| bad("truncated parameter blob"))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            params.insert(e.name, (e.shape, data));
        }
        Ok(Self {
            stage: header.stage,
            descriptor: header.descriptor,
            meta: header.meta,
            params,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_bytes()?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
