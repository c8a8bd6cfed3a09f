//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "VAESRCKP"
//! version    u32
//! header_len u64
//! header     JSON (model config, training metadata, array manifest)
//! payload    f32 values of every array, in manifest order
//! checksum   SHA-256 of everything above
//! ```
//!
//! Each manifest entry records the array name, its role (parameter or Adam
//! moment), shape and element offset into the payload.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vaesr_autograd::Tensor;

use super::adam::{AdamSlot, AdamState};
use super::config::{Phase, TrainConfig};
use super::log::LogRecord;
use crate::error::{Error, Result};
use crate::models::{ModelConfig, Network, ParameterSet};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"VAESRCKP";
const CHECKSUM_LEN: usize = 32;
const PREAMBLE_LEN: usize = 8 + 4 + 8;

/// Training metadata stored next to the arrays.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    /// Phase that produced the checkpoint; `None` for a fresh initialization.
    pub phase: Option<Phase>,
    /// Completed iterations of `phase`.
    pub iteration: usize,
    pub seed: u64,
    pub config: Option<TrainConfig>,
    /// One record per completed iteration of `phase`.
    pub history: Vec<LogRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet<f32>,
    pub meta: TrainMeta,
    pub optimizer: AdamState<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayRecord {
    name: String,
    role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    network: Option<Network>,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    meta: TrainMeta,
    adam_steps: BTreeMap<String, u64>,
    arrays: Vec<ArrayRecord>,
}

impl Checkpoint {
    /// A checkpoint holding freshly initialized parameters.
    pub fn fresh(params: ParameterSet<f32>, seed: u64) -> Self {
        Self { params, meta: TrainMeta { seed, ..Default::default() }, optimizer: AdamState::default() }
    }

    pub fn to_bytes<'a>(&'a self) -> Vec<u8> {
        let mut arrays = Vec::new();
        let mut payload: Vec<&Tensor<f32>> = Vec::new();
        let mut offset = 0;
        let mut push = |name: &str, role, network, t: &'a Tensor<f32>| {
            arrays.push(ArrayRecord { name: name.to_string(), role, network, shape: t.shape().to_vec(), offset });
            offset += t.len();
            payload.push(t);
        };
        for e in self.params.entries() {
            push(&e.spec.name, Role::Param, Some(e.spec.network), &e.tensor);
        }
        for (name, slot) in &self.optimizer.slots {
            push(name, Role::AdamM, None, &slot.m);
            push(name, Role::AdamV, None, &slot.v);
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            model: self.params.config().clone(),
            meta: self.meta.clone(),
            adam_steps: self.optimizer.slots.iter().map(|(k, s)| (k.clone(), s.step)).collect(),
            arrays,
        };
        let header = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + offset * 4 + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in payload {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parse a checkpoint, validating version, checksum and every array
    /// against the stored model config.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::parse(bytes, None)
    }

    fn parse(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint { path: Default::default(), reason };
        if bytes.len() < PREAMBLE_LEN + CHECKSUM_LEN || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic or too short)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let (body, digest) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (file truncated or corrupted)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = PREAMBLE_LEN.checked_add(header_len).filter(|&e| e <= body.len());
        let Some(header_end) = header_end else {
            return Err(bad("header length exceeds file size".into()));
        };
        let header: Header = serde_json::from_slice(&body[PREAMBLE_LEN..header_end])
            .map_err(|e| bad(format!("invalid header: {e}")))?;
        let payload = &body[header_end..];
        let read = |rec: &ArrayRecord| -> Result<Tensor<f32>> {
            let n: usize = rec.shape.iter().product();
            let start = rec.offset.checked_mul(4).filter(|s| s + n * 4 <= payload.len());
            let Some(start) = start else {
                return Err(bad(format!("array `{}` lies outside the payload", rec.name)));
            };
            let data = payload[start..start + n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok(Tensor::new(rec.shape.clone(), data))
        };

        let mut params = Vec::new();
        let mut moments: BTreeMap<String, (Option<Tensor<f32>>, Option<Tensor<f32>>)> = BTreeMap::new();
        for rec in &header.arrays {
            let t = read(rec)?;
            match rec.role {
                Role::Param => params.push((rec.name.clone(), t)),
                Role::AdamM => moments.entry(rec.name.clone()).or_default().0 = Some(t),
                Role::AdamV => moments.entry(rec.name.clone()).or_default().1 = Some(t),
            }
        }
        let model = expected.unwrap_or(&header.model);
        let params = ParameterSet::from_arrays(model, params)?;
        if expected.is_some_and(|m| *m != header.model) {
            return Err(bad("model config differs from the expected one".into()));
        }
        let mut optimizer = AdamState::default();
        for (name, (m, v)) in moments {
            let (Some(m), Some(v)) = (m, v) else {
                return Err(bad(format!("optimizer state for `{name}` is incomplete")));
            };
            let shape = params.get(&name).map(|t| t.shape().to_vec());
            if shape.as_deref() != Some(m.shape()) || m.shape() != v.shape() {
                return Err(Error::ShapeManifest {
                    name,
                    reason: "optimizer moments do not match the parameter".into(),
                });
            }
            let step = *header
                .adam_steps
                .get(&name)
                .ok_or_else(|| bad(format!("optimizer step count for `{name}` missing")))?;
            optimizer.slots.insert(name, AdamSlot { step, m, v });
        }
        Ok(Self { params, meta: header.meta, optimizer })
    }

    /// Write atomically: a temporary sibling file is renamed over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_inner(path.as_ref(), None)
    }

    /// Load and validate every array against `expected`; a mismatch names
    /// the offending array.
    pub fn load_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        Self::load_inner(path.as_ref(), Some(expected))
    }

    fn load_inner(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes, expected).map_err(|e| match e {
            Error::Checkpoint { reason, .. } => Error::Checkpoint { path: path.into(), reason },
            other => other,
        })
    }
}

/// Write `bytes` to a temporary file next to `path` and rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
