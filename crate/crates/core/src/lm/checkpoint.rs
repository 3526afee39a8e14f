//! Checkpoint container: magic, u32 format version, u64 header length, JSON
//! header, little-endian f32 payload, trailing sha256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::model::{Model, TrainingState};
use super::params::{ParamLayout, TensorInfo};
use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

pub const MAGIC: &[u8; 8] = b"CLMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub dtype: String,
    pub vocab_hash: String,
    pub corpus_hash: Option<String>,
    pub tensors: Vec<TensorInfo>,
    pub training_state: Option<TrainingCounters>,
    /// Number of f32 values in the payload.
    pub payload_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingCounters {
    pub step: usize,
    pub tokens_seen: u64,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn checkpoint_bytes(model: &Model, corpus_hash: Option<String>) -> Result<Vec<u8>> {
    let total = model.layout.total;
    let mut tensors = model.layout.tensors.clone();
    let mut payload: Vec<f32> = model.params.clone();
    let counters = model.training_state.as_ref().map(|s| {
        tensors.push(TensorInfo { name: "adam.m".into(), dims: vec![total], offset: total });
        tensors.push(TensorInfo { name: "adam.v".into(), dims: vec![total], offset: 2 * total });
        payload.extend_from_slice(&s.m);
        payload.extend_from_slice(&s.v);
        TrainingCounters { step: s.step, tokens_seen: s.tokens_seen }
    });
    let header = CheckpointHeader {
        config: model.config.clone(),
        dtype: "f32".into(),
        vocab_hash: Vocabulary::hash(),
        corpus_hash,
        tensors,
        training_state: counters,
        payload_len: payload.len(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(24 + header.len() + payload.len() * 4 + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn save_checkpoint(model: &Model, path: &Path, corpus_hash: Option<String>) -> Result<()> {
    let bytes = checkpoint_bytes(model, corpus_hash)?;
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn split_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 20 + 32 {
        return Err(bad(format!("truncated: {} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("content hash mismatch (truncated or corrupt file)"));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize.checked_add(header_len).filter(|&e| e <= body.len()).ok_or_else(|| bad("header overruns file"))?;
    let header: CheckpointHeader = serde_json::from_slice(&body[20..header_end])?;
    Ok((header, &body[header_end..]))
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(split_header(&bytes)?.0)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Model, CheckpointHeader)> {
    let (header, payload) = split_header(bytes)?;
    if header.vocab_hash != Vocabulary::hash() {
        return Err(bad("vocabulary hash differs from this build's vocabulary"));
    }
    if header.dtype != "f32" {
        return Err(bad(format!("unsupported dtype {}", header.dtype)));
    }
    if payload.len() != header.payload_len * 4 {
        return Err(bad(format!("payload holds {} bytes, header declares {} values", payload.len(), header.payload_len)));
    }
    let layout = ParamLayout::new(&header.config);
    if header.tensors[..layout.tensors.len().min(header.tensors.len())] != layout.tensors[..] {
        return Err(bad("tensor directory does not match the configured architecture"));
    }
    let values: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let total = layout.total;
    let expected = if header.training_state.is_some() { 3 * total } else { total };
    if values.len() != expected {
        return Err(bad(format!("{} values, expected {expected}", values.len())));
    }
    let mut model = Model::from_params(header.config.clone(), values[..total].to_vec())?;
    model.training_state = header.training_state.map(|c| TrainingState {
        step: c.step,
        tokens_seen: c.tokens_seen,
        m: values[total..2 * total].to_vec(),
        v: values[2 * total..].to_vec(),
    });
    Ok((model, header))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(checkpoint_from_bytes(&bytes)?.0)
}
