//! Versioned binary checkpoints.
//!
//! Layout: `LEFTCKPT`, a little-endian `u32` format version, a `u64` header
//! length, the JSON header, then every parameter as a little-endian `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Parameters};
use crate::fsutil::write_atomic;
use crate::tokenizer::Vocabulary;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LEFTCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    vocabulary: Vocabulary,
    param_count: usize,
    /// Optimizer steps taken before the save.
    steps: u64,
}

/// Weights plus the vocabulary they were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters<f32>,
    pub vocabulary: Vocabulary,
    pub steps: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            config: self.params.config.clone(),
            vocabulary: self.vocabulary.clone(),
            param_count: self.params.len(),
            steps: self.steps,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.params.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let corrupt = |m: &str| ModelError::CorruptCheckpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::VersionMismatch(format!("file has format {version}, expected {CHECKPOINT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20usize.saturating_add(hlen)).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(&format!("bad header: {e}")))?;
        if header.config.vocab_size != header.vocabulary.len() {
            return Err(ModelError::VersionMismatch(format!(
                "model vocabulary size {} does not match the stored vocabulary of {}",
                header.config.vocab_size,
                header.vocabulary.len()
            )));
        }
        let raw = &bytes[20 + hlen..];
        if raw.len() != header.param_count * 4 {
            return Err(corrupt(&format!("{} weight bytes for {} parameters", raw.len(), header.param_count)));
        }
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let params = Parameters::from_data(&header.config, data)?;
        Ok(Checkpoint { params, vocabulary: header.vocabulary, steps: header.steps })
    }

    /// Rejects checkpoints trained against a different vocabulary.
    pub fn ensure_vocabulary(&self, expected: &Vocabulary) -> Result<(), ModelError> {
        if self.vocabulary.len() != expected.len() {
            return Err(ModelError::VersionMismatch(format!(
                "checkpoint vocabulary has {} symbols, corpus has {}",
                self.vocabulary.len(),
                expected.len()
            )));
        }
        if &self.vocabulary != expected {
            return Err(ModelError::VersionMismatch("checkpoint vocabulary differs from the corpus vocabulary".into()));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), ModelError> {
    write_atomic(path, &checkpoint.to_bytes()).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    Checkpoint::from_bytes(&bytes)
}
