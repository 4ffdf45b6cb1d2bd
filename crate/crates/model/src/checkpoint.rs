//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `M3DCKPT1`, a little-endian `u64` length and
//! that many bytes of JSON metadata, then one record per parameter in name
//! order: `u64` name length, name bytes, `u64` rank, one `u64` per
//! dimension, and the values as little-endian `f32`.

use std::path::Path;

use deckqa::textproc::Vocab;
use deckqa_numerics::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::network::Model;
use crate::{Method, ModelError};

pub const MAGIC: &[u8; 8] = b"M3DCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub method: Method,
    pub config: ModelConfig,
    /// Tokens in id order.
    pub vocab: Vec<String>,
    /// Selector probability threshold tuned on dev, when the model has a head.
    pub threshold: Option<f64>,
    pub step: u64,
    pub best_dev_loss: Option<f64>,
    /// Resolved run configuration the model was trained with.
    #[serde(default)]
    pub run_config: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(method: Method, model: &Model, vocab: &Vocab) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            method,
            config: model.config.clone(),
            vocab: (0..vocab.len() as u32).map(|i| vocab.token(i).to_string()).collect(),
            threshold: None,
            step: model.store.step,
            best_dev_loss: None,
            run_config: serde_json::Value::Null,
        }
    }

    pub fn vocab(&self) -> Result<Vocab, ModelError> {
        let mut text = self.vocab.join("\n");
        text.push('\n');
        Vocab::from_text(&text).map_err(|e| ModelError::Corrupt(e.to_string()))
    }
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Model,
}

impl Checkpoint {
    /// Fails with `Mismatch` unless the stored architecture equals `expected`.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<(), ModelError> {
        if &self.meta.config != expected {
            return Err(ModelError::Mismatch("checkpoint was trained with a different model config".into()));
        }
        Ok(())
    }
}

pub fn to_bytes(model: &Model, meta: &CheckpointMeta) -> Result<Vec<u8>, ModelError> {
    let json = serde_json::to_vec(meta).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + model.store.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, p) in model.store.iter_by_name() {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(ModelError::Corrupt(format!("truncated while reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize, ModelError> {
        let n = self.u64(what)?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| ModelError::Corrupt(format!("implausible {what} {n}")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(ModelError::Corrupt("bad magic".into()));
    }
    let n = r.len("metadata length")?;
    let meta_bytes = r.take(n, "metadata")?;
    let probe: serde_json::Value =
        serde_json::from_slice(meta_bytes).map_err(|e| ModelError::Corrupt(format!("metadata: {e}")))?;
    let version = probe.get("format_version").and_then(serde_json::Value::as_u64);
    if version != Some(FORMAT_VERSION as u64) {
        return Err(ModelError::Mismatch(format!("unsupported format version {version:?}")));
    }
    let meta: CheckpointMeta =
        serde_json::from_value(probe).map_err(|e| ModelError::Corrupt(format!("metadata: {e}")))?;
    meta.config.validate().map_err(|e| ModelError::Corrupt(e.to_string()))?;
    meta.vocab()?;

    let mut model = Model::new(meta.config.clone(), 0)?;
    let expected: Vec<(String, Vec<usize>)> =
        model.store.iter_by_name().map(|(n, p)| (n.to_string(), p.value.shape().to_vec())).collect();
    for (name, shape) in &expected {
        // Ending cleanly between tensors means a different architecture.
        if r.pos == bytes.len() {
            return Err(ModelError::Mismatch(format!("no tensor for parameter {name:?}")));
        }
        let len = r.len("name length")?;
        let got = std::str::from_utf8(r.take(len, "name")?).map_err(|_| ModelError::Corrupt("name is not UTF-8".into()))?;
        if got != name {
            return Err(ModelError::Mismatch(format!("expected parameter {name:?}, found {got:?}")));
        }
        let rank = r.len("rank")?;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.len("dimension")?);
        }
        if &dims != shape {
            return Err(ModelError::Mismatch(format!("{name}: shape {dims:?}, model expects {shape:?}")));
        }
        let count: usize = dims.iter().product();
        let raw = r.take(count * 4, name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        model.store.set_value(name, Tensor::new(dims, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Mismatch(format!("{} trailing bytes after the last parameter", bytes.len() - r.pos)));
    }
    model.store.step = meta.step;
    Ok(Checkpoint { meta, model })
}

pub fn save_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<(), ModelError> {
    std::fs::write(path, to_bytes(model, meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    from_bytes(&std::fs::read(path)?)
}
