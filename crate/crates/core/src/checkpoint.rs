//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "CTCSSLCK"
//! version  u32
//! hlen     u32      length of the JSON header in bytes
//! header   hlen     {"config": ModelConfig, "tensors": [{"name", "shape"}, ...]}
//! payload  f64 * n  every tensor in header order, row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::Alphabet;
use crate::model::{ModelConfig, ModelError, ModelParams, TensorSpec};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTCSSLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is not a checkpoint (bad magic)")]
    BadMagic(PathBuf),
    #[error("checkpoint version {found} is not supported (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint payload holds {found} bytes, header describes {expected}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint alphabet has {checkpoint} labels, expected {expected}")]
    AlphabetMismatch { checkpoint: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorSpec>,
}

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let header = Header {
        config: params.config().clone(),
        tensors: params.tensor_specs(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + params.num_params() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in params.flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<ModelParams, CheckpointError> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(origin.to_path_buf()));
    }
    let version = read_u32(bytes, 8).unwrap();
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = read_u32(bytes, 12).unwrap() as usize;
    let json = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| CheckpointError::Header("header runs past end of file".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header.config.validate()?;
    let expected_specs = ModelParams::init(header.config.clone())?.tensor_specs();
    if header.tensors != expected_specs {
        return Err(CheckpointError::Header("tensor list does not match the model config".into()));
    }
    let payload = &bytes[16 + hlen..];
    let count: usize = header.tensors.iter().map(TensorSpec::len).sum();
    if payload.len() != count * 8 {
        return Err(CheckpointError::Truncated {
            expected: count * 8,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ModelParams::from_flat(header.config, data)?)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(params)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes, path)
}

/// Loads a checkpoint and checks that its output layer matches `alphabet`.
pub fn load_checkpoint_for(path: &Path, alphabet: &Alphabet) -> Result<ModelParams, CheckpointError> {
    let params = load_checkpoint(path)?;
    if params.config().num_labels != alphabet.size() {
        return Err(CheckpointError::AlphabetMismatch {
            checkpoint: params.config().num_labels,
            expected: alphabet.size(),
        });
    }
    Ok(params)
}
