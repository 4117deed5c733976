//! `model.json` manifest plus a raw little-endian `model.bin` blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::Adam;
use crate::autograd::Tensor;
use crate::dataio::{read_json, write_json};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ParamStore};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "model.json";
pub const BLOB_FILE: &str = "model.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerEntry {
    pub lr: f64,
    pub clip: f64,
    pub step: u64,
    /// Byte offsets of the first and second moments, one per tensor.
    pub m: Vec<usize>,
    pub v: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config: ModelConfig,
    pub step: u64,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
    pub optimizer: Option<Adam>,
}

fn put(blob: &mut Vec<u8>, data: &[f64]) -> usize {
    let at = blob.len();
    for v in data {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    at
}

fn take(blob: &[u8], offset: usize, count: usize, path: &Path) -> Result<Vec<f64>> {
    let end = offset
        .checked_add(count * 8)
        .filter(|&e| e <= blob.len())
        .ok_or_else(|| Error::schema(path, format!("tensor at byte {offset} runs past the end of the blob")))?;
    Ok(blob[offset..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn save_checkpoint(dir: &Path, model: &Model, step: u64, optimizer: Option<&Adam>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let store = model.params();
    let mut blob = Vec::with_capacity(store.numel() * 8 * if optimizer.is_some() { 3 } else { 1 });
    let tensors = store
        .names()
        .iter()
        .zip(store.tensors())
        .map(|(name, t)| TensorEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            offset: put(&mut blob, &t.data),
        })
        .collect();
    let optimizer = optimizer.map(|o| OptimizerEntry {
        lr: o.lr,
        clip: o.clip,
        step: o.step,
        m: o.m.iter().map(|x| put(&mut blob, x)).collect(),
        v: o.v.iter().map(|x| put(&mut blob, x)).collect(),
    });
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        step,
        dtype: "f64".into(),
        tensors,
        optimizer,
    };
    let bin = dir.join(BLOB_FILE);
    fs::write(&bin, &blob).map_err(|e| Error::io(&bin, e))?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST_FILE);
    let man: Manifest = read_json(&path)?;
    if man.version != CHECKPOINT_VERSION {
        return Err(Error::schema(&path, format!("unsupported checkpoint version {}", man.version)));
    }
    if man.dtype != "f64" {
        return Err(Error::schema(&path, format!("unsupported dtype {:?}", man.dtype)));
    }
    let bin = dir.join(BLOB_FILE);
    let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut store = ParamStore::new();
    for t in &man.tensors {
        let count = t.shape.iter().product();
        store.push(t.name.clone(), Tensor::new(t.shape.clone(), take(&blob, t.offset, count, &bin)?)?);
    }
    let optimizer = match &man.optimizer {
        None => None,
        Some(o) => {
            if o.m.len() != store.len() || o.v.len() != store.len() {
                return Err(Error::schema(&path, "optimizer moments do not match the tensor table"));
            }
            let read = |offs: &[usize]| -> Result<Vec<Vec<f64>>> {
                offs.iter().zip(store.tensors()).map(|(&at, t)| take(&blob, at, t.numel(), &bin)).collect()
            };
            Some(Adam {
                lr: o.lr,
                clip: o.clip,
                step: o.step,
                m: read(&o.m)?,
                v: read(&o.v)?,
            })
        }
    };
    let model = Model::from_store(man.config, store)?;
    Ok(Checkpoint {
        model,
        step: man.step,
        optimizer,
    })
}
