//! Checkpoint directories: a JSON `manifest` indexing the little-endian f32
//! arrays concatenated in `weights.bin`.

use std::path::Path;

use ndgrad::{Params, Tensor};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderCheckpoint, EncoderConfig, HistoryEntry};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest";
pub const WEIGHTS: &str = "weights.bin";
const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `weights.bin`.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    /// `encoder`, or the task model kind such as `tc/text_cnn`.
    pub kind: String,
    pub config: serde_json::Value,
    pub vocab_fingerprint: String,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn new(kind: &str, config: serde_json::Value, vocab_fingerprint: &str) -> Self {
        Self {
            format: FORMAT,
            kind: kind.to_string(),
            config,
            vocab_fingerprint: vocab_fingerprint.to_string(),
            history: Vec::new(),
            extra: serde_json::Value::Null,
            tensors: Vec::new(),
        }
    }
}

fn to_json<S: Serialize>(v: &S) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::InvalidInput(format!("serializing manifest: {e}")))
}

/// Writes `params` in insertion order and fills in the tensor index.
pub fn write_checkpoint(dir: impl AsRef<Path>, mut manifest: Manifest, params: &Params<f32>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::with_capacity(params.num_values() * 4);
    manifest.tensors.clear();
    for (name, t) in params.iter() {
        manifest.tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: bytes.len(),
        });
        for x in t.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidInput(e.to_string()))? + "\n";
    let mp = dir.join(MANIFEST);
    std::fs::write(&mp, text).map_err(|e| Error::io(&mp, e))?;
    let wp = dir.join(WEIGHTS);
    std::fs::write(&wp, bytes).map_err(|e| Error::io(&wp, e))
}

pub fn read_checkpoint(dir: impl AsRef<Path>) -> Result<(Manifest, Params<f32>)> {
    let dir = dir.as_ref();
    let mp = dir.join(MANIFEST);
    let text = crate::corpus::read_utf8(&mp)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: mp.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let wp = dir.join(WEIGHTS);
    let bytes = std::fs::read(&wp).map_err(|e| Error::io(&wp, e))?;
    let mut params = Params::new();
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * n;
        if end > bytes.len() {
            return Err(Error::InvalidInput(format!(
                "{}: tensor `{}` runs past the end of {WEIGHTS}",
                dir.display(),
                entry.name
            )));
        }
        let data = bytes[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    Ok((manifest, params))
}

impl EncoderCheckpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let mut m = Manifest::new("encoder", to_json(&self.config)?, &self.vocab_fingerprint);
        m.history = self.history.clone();
        write_checkpoint(dir, m, &self.params)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (m, params) = read_checkpoint(dir)?;
        if m.kind != "encoder" {
            return Err(Error::InvalidInput(format!(
                "{} holds a `{}` checkpoint, not an encoder",
                dir.display(),
                m.kind
            )));
        }
        let config: EncoderConfig =
            serde_json::from_value(m.config).map_err(|e| Error::config("manifest.config", e.to_string()))?;
        let expected = EncoderCheckpoint::init(config.clone(), &placeholder_vocab(config.vocab_size)?)?;
        for (name, t) in expected.params.iter() {
            match params.get(name) {
                Some(got) if got.shape() == t.shape() => {}
                Some(got) => {
                    return Err(Error::InvalidInput(format!(
                        "tensor `{name}` has shape {:?}, config implies {:?}",
                        got.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::InvalidInput(format!("checkpoint is missing tensor `{name}`"))),
            }
        }
        Ok(Self {
            config,
            params,
            vocab_fingerprint: m.vocab_fingerprint,
            history: m.history,
        })
    }
}

fn placeholder_vocab(size: usize) -> Result<crate::tokenize::Vocabulary> {
    crate::tokenize::Vocabulary::from_tokens((crate::tokenize::NUM_SPECIALS..size).map(|i| format!("#{i}")))
}
