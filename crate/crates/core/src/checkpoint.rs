//! Checkpoint files.
//!
//! Layout: `u64` little-endian header length, a JSON header, then every
//! tensor as little-endian `f64` values in header order. Offsets in the
//! header are byte offsets from the start of the blob section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Matrix;
use crate::training::TrainConfig;

pub const FORMAT: &str = "linmil-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
    pub train: Option<TrainConfig>,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Model, seed: u64, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(model.params().len());
    let mut offset = 0u64;
    for (_, p) in model.params().iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: [p.value.rows(), p.value.cols()],
            dtype: "f64".into(),
            offset,
            trainable: p.trainable,
        });
        offset += 8 * p.value.len() as u64;
    }
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: VERSION,
        config: *model.config(),
        dim: model.config().dim,
        classes: model.config().classes,
        seed,
        train: train.cloned(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.params().iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, CheckpointHeader)> {
    if bytes.len() < 8 {
        return Err(format_err(0, "truncated checkpoint length prefix"));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let blob_start = 8usize
        .checked_add(len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| format_err(0, format!("header length {len} exceeds file size")))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..blob_start])
        .map_err(|e| format_err(8, format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(format_err(
            8,
            format!(
                "unsupported checkpoint {} v{}",
                header.format, header.version
            ),
        ));
    }
    let blobs = &bytes[blob_start..];
    let mut store = ParamStore::new();
    let mut expected = 0u64;
    for t in &header.tensors {
        if t.dtype != "f64" {
            return Err(format_err(
                8,
                format!("tensor {} has dtype {}", t.name, t.dtype),
            ));
        }
        if t.offset != expected {
            return Err(format_err(
                blob_start as u64 + t.offset,
                format!("tensor {} is not contiguous", t.name),
            ));
        }
        let n = t.shape[0] * t.shape[1];
        let start = t.offset as usize;
        let end = start + 8 * n;
        if end > blobs.len() {
            return Err(format_err(
                (blob_start + start) as u64,
                format!("truncated tensor {}", t.name),
            ));
        }
        let data = blobs[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Matrix::from_vec(t.shape[0], t.shape[1], data)?;
        if t.trainable {
            store.add(t.name.clone(), value);
        } else {
            store.add_buffer(t.name.clone(), value);
        }
        expected = end as u64;
    }
    if expected as usize != blobs.len() {
        return Err(format_err(
            blob_start as u64 + expected,
            format!("{} trailing bytes", blobs.len() - expected as usize),
        ));
    }
    let model = Model::from_parts(header.config, store)?;
    Ok((model, header))
}

pub fn save(
    path: impl AsRef<Path>,
    model: &Model,
    seed: u64,
    train: Option<&TrainConfig>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model, seed, train)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Model, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
