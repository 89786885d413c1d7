//! Binary checkpoint: magic line, little-endian u64 header length, JSON
//! header, then every tensor as little-endian f64 in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::{ModelConfig, ModelError, ModelParams};
use crate::scalar::Scalar;
use crate::textproc::Vocabulary;

const MAGIC: &[u8] = b"TSEE1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub schema_version: String,
    /// Which decoding scheme the weights were trained for.
    pub system: String,
    /// Serialized vocabulary, so a checkpoint is self-contained.
    pub vocab: String,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorInfo>,
}

impl CheckpointMeta {
    pub fn new(config: &ModelConfig, vocab: &Vocabulary, schema_version: &str, system: &str) -> Self {
        CheckpointMeta {
            config: config.clone(),
            vocab_hash: vocab.hash(),
            schema_version: schema_version.to_string(),
            system: system.to_string(),
            vocab: vocab.to_json(),
            extra: serde_json::Value::Null,
        }
    }

    pub fn vocabulary(&self) -> Result<Vocabulary, ModelError> {
        Vocabulary::from_json(&self.vocab).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}

pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ModelParams<T>, meta: &CheckpointMeta) -> Result<(), ModelError> {
    let header = Header {
        meta: meta.clone(),
        tensors: params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(n, t)| TensorInfo {
                name: n.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(MAGIC.len() + 8 + json.len() + params.param_count() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(&buf).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
}

/// Loads a checkpoint. The embedded vocabulary must hash to the recorded
/// hash, and to `expected_vocab_hash` when given.
pub fn load_checkpoint<T: Scalar>(path: &Path, expected_vocab_hash: Option<&str>) -> Result<(ModelParams<T>, CheckpointMeta), ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    let corrupt = |m: &str| ModelError::Checkpoint(format!("{}: {m}", path.display()));
    if !bytes.starts_with(MAGIC) {
        return Err(corrupt("not a checkpoint file"));
    }
    let mut at = MAGIC.len();
    let len_bytes: [u8; 8] = bytes.get(at..at + 8).ok_or_else(|| corrupt("truncated header"))?.try_into().expect("8 bytes");
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    at += 8;
    let hjson = bytes.get(at..at + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(hjson).map_err(|e| corrupt(&e.to_string()))?;
    at += hlen;

    let vocab = header.meta.vocabulary()?;
    if vocab.hash() != header.meta.vocab_hash {
        return Err(ModelError::VocabMismatch {
            expected: header.meta.vocab_hash.clone(),
            found: vocab.hash(),
        });
    }
    if let Some(want) = expected_vocab_hash {
        if want != header.meta.vocab_hash {
            return Err(ModelError::VocabMismatch {
                expected: want.to_string(),
                found: header.meta.vocab_hash.clone(),
            });
        }
    }
    if vocab.len() != header.meta.config.vocab_size {
        return Err(corrupt("vocabulary size disagrees with the model config"));
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for info in &header.tensors {
        let n = info.rows * info.cols;
        let raw = bytes.get(at..at + n * 8).ok_or_else(|| corrupt("truncated tensor data"))?;
        at += n * 8;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        tensors.push((info.name.clone(), Matrix::from_vec(info.rows, info.cols, data)));
    }
    if at != bytes.len() {
        return Err(corrupt("trailing bytes after tensor data"));
    }
    let params = ModelParams::from_tensors(&header.meta.config, tensors)?;
    Ok((params, header.meta))
}
