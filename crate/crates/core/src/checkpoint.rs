//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `CUELMCKP`, a little-endian `u32` format version,
//! a `u64` header length, a JSON header, then one raw little-endian blob.
//! The header records the model config, the vocabulary file, every tensor
//! entry (name, kind, dtype, shape and its byte range in the blob), the
//! adapters and the metrics history.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, ModelError, ModelState, Weight};
use crate::numerics::{DType, Element, Tensor};
use crate::qlora::{LoraAdapter, QloraError, QuantizedTensor};
use crate::tokenizer::{TokenizerError, Vocabulary};
use crate::train::EpochRecord;

const MAGIC: &[u8; 8] = b"CUELMCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qlora(#[from] QloraError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Entry {
    Dense {
        name: String,
        dtype: DType,
        shape: Vec<usize>,
        offset: usize,
        bytes: usize,
    },
    Nf4 {
        name: String,
        shape: Vec<usize>,
        block_size: usize,
        offset: usize,
        code_bytes: usize,
        absmax_len: usize,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AdapterEntry {
    target: String,
    rank: usize,
    alpha: f64,
    a: Entry,
    b: Entry,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    vocab: String,
    entries: Vec<Entry>,
    adapters: Vec<AdapterEntry>,
    metrics: Vec<EpochRecord>,
}

/// A trained model with everything needed to reload and run it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub state: ModelState<T>,
    pub vocab: Vocabulary,
    pub metrics: Vec<EpochRecord>,
}

fn dense_entry<T: Element>(name: &str, t: &Tensor<T>, blob: &mut Vec<u8>) -> Entry {
    let offset = blob.len();
    for &v in t.data() {
        v.write_le(blob);
    }
    Entry::Dense {
        name: name.to_string(),
        dtype: T::DTYPE,
        shape: t.shape().to_vec(),
        offset,
        bytes: blob.len() - offset,
    }
}

fn slice<'a>(blob: &'a [u8], offset: usize, len: usize) -> Result<&'a [u8], CheckpointError> {
    offset
        .checked_add(len)
        .and_then(|end| blob.get(offset..end))
        .ok_or_else(|| CheckpointError::Corrupt(format!("range {offset}+{len} outside blob of {}", blob.len())))
}

fn read_dense<T: Element>(entry: &Entry, blob: &[u8]) -> Result<Tensor<T>, CheckpointError> {
    let Entry::Dense {
        name,
        dtype,
        shape,
        offset,
        bytes,
    } = entry
    else {
        return Err(CheckpointError::Corrupt("expected a dense entry".into()));
    };
    let n: usize = shape.iter().product();
    if n * dtype.size_of() != *bytes {
        return Err(CheckpointError::Corrupt(format!("{name}: byte count does not match shape")));
    }
    let raw = slice(blob, *offset, *bytes)?;
    let data: Vec<T> = match dtype {
        DType::F32 => raw.chunks_exact(4).map(|c| T::from_f64(f32::read_le(c) as f64)).collect(),
        DType::F64 => raw.chunks_exact(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
    };
    Tensor::new(shape.clone(), data).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

impl<T: Element> Checkpoint<T> {
    pub fn new(state: ModelState<T>, vocab: Vocabulary, metrics: Vec<EpochRecord>) -> Self {
        Self { state, vocab, metrics }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blob = Vec::new();
        let mut entries = Vec::new();
        for (name, w) in &self.state.weights {
            match w {
                Weight::Dense(t) => entries.push(dense_entry(name, t, &mut blob)),
                Weight::Quantized(q) => {
                    let offset = blob.len();
                    blob.extend_from_slice(q.packed_codes());
                    for a in q.absmax() {
                        blob.extend_from_slice(&a.to_le_bytes());
                    }
                    entries.push(Entry::Nf4 {
                        name: name.clone(),
                        shape: q.shape().to_vec(),
                        block_size: q.block_size(),
                        offset,
                        code_bytes: q.packed_codes().len(),
                        absmax_len: q.absmax().len(),
                    });
                }
            }
        }
        let adapters = self
            .state
            .adapters
            .iter()
            .map(|(target, a)| AdapterEntry {
                target: target.clone(),
                rank: a.rank,
                alpha: a.alpha,
                a: dense_entry(&format!("{target}.lora_a"), &a.a, &mut blob),
                b: dense_entry(&format!("{target}.lora_b"), &a.b, &mut blob),
            })
            .collect();
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.state.config.clone(),
            vocab: self.vocab.to_text(),
            entries,
            adapters,
            metrics: self.metrics.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blob);
        out
    }

    /// Parses a checkpoint. Dense tensors stored in another dtype are cast to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_bytes = slice(bytes, 20, header_len)?;
        let header: Header =
            serde_json::from_slice(header_bytes).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
        let blob = &bytes[20 + header_len..];

        let mut weights = BTreeMap::new();
        for entry in &header.entries {
            match entry {
                Entry::Dense { name, .. } => {
                    weights.insert(name.clone(), Weight::Dense(read_dense(entry, blob)?));
                }
                Entry::Nf4 {
                    name,
                    shape,
                    block_size,
                    offset,
                    code_bytes,
                    absmax_len,
                } => {
                    let codes = slice(blob, *offset, *code_bytes)?.to_vec();
                    let absmax = slice(blob, offset + code_bytes, 4 * absmax_len)?
                        .chunks_exact(4)
                        .map(f32::read_le)
                        .collect();
                    let q = QuantizedTensor::from_parts(shape.clone(), *block_size, codes, absmax)?;
                    weights.insert(name.clone(), Weight::Quantized(q));
                }
            }
        }
        let shapes = header.config.weight_shapes();
        if shapes.len() != weights.len() || shapes.iter().any(|(k, s)| weights.get(k).map(|w| w.shape()) != Some(s.as_slice())) {
            return Err(CheckpointError::Corrupt("weights do not match the model config".into()));
        }
        let mut adapters = BTreeMap::new();
        for e in &header.adapters {
            let adapter = LoraAdapter {
                target_name: e.target.clone(),
                a: read_dense(&e.a, blob)?,
                b: read_dense(&e.b, blob)?,
                rank: e.rank,
                alpha: e.alpha,
            };
            let base = weights
                .get(&e.target)
                .ok_or_else(|| CheckpointError::Corrupt(format!("adapter for unknown weight {}", e.target)))?;
            adapter.check_fits(base.shape())?;
            adapters.insert(e.target.clone(), adapter);
        }
        let vocab = Vocabulary::from_text(&header.vocab)?;
        if vocab.len() != header.config.vocab_size {
            return Err(CheckpointError::Corrupt(format!(
                "vocabulary has {} entries, config says {}",
                vocab.len(),
                header.config.vocab_size
            )));
        }
        Ok(Self {
            state: ModelState {
                config: header.config,
                weights,
                adapters,
            },
            vocab,
            metrics: header.metrics,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
