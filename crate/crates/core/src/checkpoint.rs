//! Self-describing checkpoint files.
//!
//! Layout: the 8-byte magic `DTNCKPT1`, a little-endian `u64` header length,
//! a JSON header (recipe, config, vocabulary, component layouts, tensor
//! names and shapes, optional resumable training state), then every tensor's
//! values as little-endian `f64` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::dtn::DtnBank;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::pipeline::TrainState;
use crate::supervision::ClassifierParams;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DTNCKPT1";

/// Which training recipe produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Baseline,
    Teacher { domain: usize },
    DomainControl,
    Unified,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub recipe: Recipe,
    pub config: TrainConfig,
    pub vocab: Vec<String>,
    pub bank: Option<DtnBank>,
    pub classifiers: Option<ClassifierParams>,
    pub params: ModelParams,
    /// Present when the run can be resumed from this file.
    pub state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    recipe: Recipe,
    config: TrainConfig,
    vocab: Vec<String>,
    bank: Option<DtnBank>,
    classifiers: Option<ClassifierParams>,
    tensors: Vec<(String, Vec<usize>)>,
    state: Option<TrainState>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            recipe: self.recipe,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            bank: self.bank,
            classifiers: self.classifiers,
            tensors: self
                .params
                .iter()
                .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
                .collect(),
            state: self.state.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(len))
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(format!("header: {e}")))?;
        let mut data = &bytes[16 + len..];
        let mut params = ModelParams::new();
        for (name, shape) in header.tensors {
            let n: usize = shape.iter().product();
            if data.len() < 8 * n {
                return Err(corrupt(format!("truncated data for `{name}`")));
            }
            let values = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[8 * n..];
            params.insert(name, Tensor::new(shape, values)?)?;
        }
        if !data.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", data.len())));
        }
        Ok(Checkpoint {
            recipe: header.recipe,
            config: header.config,
            vocab: header.vocab,
            bank: header.bank,
            classifiers: header.classifiers,
            params,
            state: header.state,
        })
    }

    /// Writes the file and returns its SHA-256 hex digest.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized file contents.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    /// The checkpoint without its resumable state, as shipped for evaluation.
    pub fn frozen(&self) -> Checkpoint {
        Checkpoint {
            state: None,
            ..self.clone()
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
