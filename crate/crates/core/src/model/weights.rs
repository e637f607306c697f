//! `DRCNN1` weight files.
//!
//! Layout (little-endian): the 6-byte magic `DRCNN1`, then for each
//! parameter in model order: name length (`u32`), UTF-8 name, rank (`u32`),
//! one `u32` per dimension, and the values as row-major `f32`. The file ends
//! right after the last parameter.

use std::path::Path;

use thiserror::Error;

use crate::fsutil;
use crate::model::{ModelConfig, ModelError, ModelGraph};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"DRCNN1";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a DRCNN1 weight file")]
    BadMagic,
    #[error("truncated weight file at byte {offset} (reading {what})")]
    Truncated { offset: usize, what: String },
    #[error("parameter name is not valid UTF-8 at byte {0}")]
    InvalidName(usize),
    #[error("unknown parameter `{0}` for this model config")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("shape mismatch for parameter `{name}`: file has {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn encode_weights(model: &ModelGraph) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for p in model.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// A parameter exactly as stored in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredParameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], WeightsError> {
        if self.bytes.len() - self.pos < n {
            return Err(WeightsError::Truncated {
                offset: self.bytes.len(),
                what: what.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, WeightsError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<StoredParameter>, WeightsError> {
    if bytes.len() < MAGIC.len() {
        return if MAGIC.starts_with(bytes) {
            Err(WeightsError::Truncated {
                offset: bytes.len(),
                what: "magic".into(),
            })
        } else {
            Err(WeightsError::BadMagic)
        };
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let mut params = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u32("name length")? as usize;
        let start = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| WeightsError::InvalidName(start))?
            .to_string();
        let rank = r.u32(&format!("rank of {name}"))? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32(&format!("dims of {name}"))? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| WeightsError::Truncated {
                offset: r.pos,
                what: format!("data of {name}"),
            })?;
        let data = r
            .take(count, &format!("data of {name}"))?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push(StoredParameter { name, shape, data });
    }
    Ok(params)
}

/// Builds `config` and overwrites its parameters from the stored weights.
pub fn model_from_weights(config: ModelConfig, stored: Vec<StoredParameter>) -> Result<ModelGraph, WeightsError> {
    let mut model = ModelGraph::build(config)?;
    let mut seen = vec![false; model.params().len()];
    for sp in stored {
        let idx = model
            .params()
            .iter()
            .position(|p| p.name == sp.name)
            .ok_or_else(|| WeightsError::UnknownParameter(sp.name.clone()))?;
        if seen[idx] {
            return Err(WeightsError::DuplicateParameter(sp.name));
        }
        seen[idx] = true;
        let target = &mut model.params_mut()[idx];
        if target.value.shape() != sp.shape.as_slice() {
            return Err(WeightsError::ShapeMismatch {
                name: sp.name,
                expected: target.value.shape().to_vec(),
                found: sp.shape,
            });
        }
        let data = sp.data.into_iter().map(f64::from).collect();
        target.value = Tensor::new(sp.shape, data).map_err(ModelError::from)?;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(WeightsError::MissingParameter(model.params()[i].name.clone()));
    }
    Ok(model)
}

pub fn save_weights(model: &ModelGraph, path: &Path) -> Result<(), WeightsError> {
    fsutil::write_atomic(path, &encode_weights(model)).map_err(|source| WeightsError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_weights(path: &Path, config: ModelConfig) -> Result<ModelGraph, WeightsError> {
    let bytes = std::fs::read(path).map_err(|source| WeightsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_weights(config, decode_weights(&bytes)?)
}
