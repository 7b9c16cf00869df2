//! Bit-exact parameter checkpoints with a JSON metadata sidecar.
//!
//! Layout: magic `RDPK`, version byte, little-endian `u32` header length, a
//! JSON header (architecture, tensor directory, content hash), then every
//! tensor as little-endian `f32` in directory order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{ArchConfig, CodecParams, SubNetwork};
use crate::error::{CoreError, Result};
use crate::training::TrainConfig;

const MAGIC: [u8; 4] = *b"RDPK";
const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    RdTrained,
    FrozenBaseline,
    PdFinetuned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub params_hash: String,
    pub frozen_hash: String,
    pub stage: Stage,
    pub gamma: Option<f64>,
    pub parent_hash: Option<String>,
    pub config: TrainConfig,
    pub producer: String,
}

impl CheckpointMeta {
    pub fn new(params: &CodecParams<f32>, stage: Stage, gamma: Option<f64>, parent_hash: Option<String>, config: TrainConfig) -> Self {
        CheckpointMeta {
            params_hash: params.content_hash(),
            frozen_hash: params.frozen_hash(),
            stage,
            gamma,
            parent_hash,
            config,
            producer: concat!("rdp-core ", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage == Stage::PdFinetuned && (self.gamma.is_none() || self.parent_hash.is_none()) {
            return Err(CoreError::Checkpoint("fine-tuned checkpoints need a gamma and a parent hash".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchConfig,
    tensors: Vec<(SubNetwork, Vec<usize>)>,
    content_hash: String,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn encode_params(params: &CodecParams<f32>) -> Vec<u8> {
    let header = Header {
        arch: params.arch,
        tensors: SubNetwork::ALL.iter().map(|&s| (s, params.tensor_lengths(s))).collect(),
        content_hash: params.content_hash(),
    };
    let json = serde_json::to_vec(&header).expect("plain header");
    let mut out = Vec::with_capacity(9 + json.len() + 4 * params.num_params());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for s in SubNetwork::ALL {
        for t in params.tensors(s) {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<CodecParams<f32>> {
    let bad = |m: &str| CoreError::Checkpoint(m.to_string());
    if bytes.len() < 9 || bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    if bytes[4] != VERSION {
        return Err(bad("unsupported checkpoint version"));
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let body = bytes.get(9..9 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut params = CodecParams::<f32>::zeros(header.arch)?;
    let mut pos = 9 + hlen;
    for (sub, lengths) in &header.tensors {
        let data: Vec<Vec<f32>> = lengths
            .iter()
            .map(|&n| {
                let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated tensor data"))?;
                pos += 4 * n;
                Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            })
            .collect::<Result<_>>()?;
        params.load_tensors(*sub, &data)?;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    let found = params.content_hash();
    if found != header.content_hash {
        return Err(CoreError::HashMismatch {
            expected: header.content_hash,
            found,
        });
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &CodecParams<f32>, meta: &CheckpointMeta) -> Result<()> {
    meta.validate()?;
    if meta.params_hash != params.content_hash() {
        return Err(CoreError::Checkpoint("metadata hash does not describe these parameters".into()));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode_params(params))?;
    std::fs::write(meta_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Loads and verifies a checkpoint against its embedded hash and its sidecar.
pub fn load_checkpoint(path: &Path) -> Result<(CodecParams<f32>, CheckpointMeta)> {
    let params = decode_params(&std::fs::read(path)?)?;
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(meta_path(path))?)?;
    meta.validate()?;
    let found = params.content_hash();
    if meta.params_hash != found {
        return Err(CoreError::HashMismatch {
            expected: meta.params_hash,
            found,
        });
    }
    if meta.frozen_hash != params.frozen_hash() {
        return Err(CoreError::HashMismatch {
            expected: meta.frozen_hash,
            found: params.frozen_hash(),
        });
    }
    Ok((params, meta))
}
