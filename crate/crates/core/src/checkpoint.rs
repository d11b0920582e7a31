//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `LSEGCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header (configuration, step
//! counter, seed, parameter names and shapes, training metadata), then for
//! every parameter in header order its value, first moment and second moment
//! as little-endian `f64` in row-major order.
//!
//! The vocabulary is stored next to the checkpoint as `vocab.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Parameter, Tensor};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::{Model, TrainConfig};

pub const MAGIC: &[u8; 8] = b"LSEGCKPT";
pub const VERSION: u32 = 1;
pub const VOCAB_FILE: &str = "vocab.json";

/// Facts about how a checkpoint was selected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointMeta {
    pub best_epoch: Option<usize>,
    pub dev_f1: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    step: u64,
    seed: u64,
    params: Vec<ParamEntry>,
    meta: CheckpointMeta,
}

/// Everything read back from a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamStore,
    pub meta: CheckpointMeta,
}

pub fn encode(model: &Model, meta: &CheckpointMeta) -> Vec<u8> {
    let store = model.params();
    let header = Header {
        config: model.config().clone(),
        step: store.step(),
        seed: store.seed(),
        params: store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header is plain data");
    let mut out = Vec::with_capacity(20 + json.len() + 24 * store.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for t in [&p.value, &p.m, &p.v] {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        let raw = self.take(len * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(shape.to_vec(), data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("missing magic header".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let mut params = ParamStore::new(header.seed);
    for entry in &header.params {
        if entry.shape.is_empty() || entry.shape.contains(&0) {
            return Err(Error::Checkpoint(format!("parameter {:?} has an empty shape", entry.name)));
        }
        let value = r.tensor(&entry.shape)?;
        let m = r.tensor(&entry.shape)?;
        let v = r.tensor(&entry.shape)?;
        params.push_raw(Parameter {
            name: entry.name.clone(),
            value,
            m,
            v,
        })?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - r.pos
        )));
    }
    params.set_step(header.step);
    Ok(Checkpoint {
        config: header.config,
        params,
        meta: header.meta,
    })
}

fn vocab_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_file_name(VOCAB_FILE)
}

/// Writes the checkpoint and its vocabulary file.
pub fn save(path: impl AsRef<Path>, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, meta)).map_err(|e| Error::io(path, e))?;
    model.vocab().save(vocab_path(path))
}

pub fn read(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a model from a checkpoint and the vocabulary beside it.
pub fn load(path: impl AsRef<Path>) -> Result<(Model, CheckpointMeta)> {
    let path = path.as_ref();
    let ckpt = read(path)?;
    let vocab = Vocab::load(vocab_path(path))?;
    let model = Model::from_parts(ckpt.config, vocab, ckpt.params)?;
    Ok((model, ckpt.meta))
}
