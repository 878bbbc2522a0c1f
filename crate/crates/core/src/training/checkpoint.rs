//! Versioned binary checkpoint.
//!
//! ```text
//! magic   8 bytes  "LOADCKPT"
//! version u32 LE
//! length  u64 LE   body length in bytes
//! sha256  32 bytes digest of the body
//! body    u32 block count, then per block:
//!           u8 kind (0 param, 1 buffer, 2 adam m, 3 adam v)
//!           u32 name length, name (UTF-8)
//!           u32 rank, rank x u64 dims, f64 LE values
//!         u64 metadata length, metadata JSON
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::NormStats;
use crate::model::{LoadModel, ModelConfig};
use crate::tensor::{AdamConfig, AdamState, Moments, ParamStore, Tensor};

use super::schedule::StageSchedule;
use super::trainer::LossRecord;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LOADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: expected {expected} body bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// Everything needed to resume or use a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: LoadModel,
    pub stats: NormStats,
    pub seed: u64,
    /// Completed epochs per stage.
    pub epochs: [usize; 2],
    /// Whether each stage ran to its final epoch.
    pub complete: [bool; 2],
    pub schedules: [Option<StageSchedule>; 2],
    pub adam: [Option<AdamState>; 2],
    pub history: Vec<LossRecord>,
}

impl Checkpoint {
    pub fn new(model: LoadModel, stats: NormStats, seed: u64) -> Self {
        Checkpoint {
            model,
            stats,
            seed,
            epochs: [0, 0],
            complete: [false, false],
            schedules: [None, None],
            adam: [None, None],
            history: Vec::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    config: AdamConfig,
    lr: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    stats: NormStats,
    seed: u64,
    epochs: [usize; 2],
    complete: [bool; 2],
    schedules: [Option<StageSchedule>; 2],
    adam: [Option<AdamMeta>; 2],
    history: Vec<LossRecord>,
}

const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;
const KIND_ADAM_M: u8 = 2;
const KIND_ADAM_V: u8 = 3;

fn put_block(out: &mut Vec<u8>, kind: u8, name: &str, t: &Tensor) {
    out.push(kind);
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

/// Serialize to bytes. Equal checkpoints always give identical bytes.
pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut blocks: Vec<(u8, String, &Tensor)> = Vec::new();
    blocks.extend(ckpt.model.params.params().map(|(k, v)| (KIND_PARAM, k.clone(), v)));
    blocks.extend(ckpt.model.params.buffers().map(|(k, v)| (KIND_BUFFER, k.clone(), v)));
    for (i, state) in ckpt.adam.iter().enumerate() {
        if let Some(s) = state {
            for (name, m) in &s.moments {
                blocks.push((KIND_ADAM_M, format!("{}:{name}", i + 1), &m.m));
                blocks.push((KIND_ADAM_V, format!("{}:{name}", i + 1), &m.v));
            }
        }
    }
    let mut body = Vec::new();
    body.extend((blocks.len() as u32).to_le_bytes());
    for (kind, name, t) in &blocks {
        put_block(&mut body, *kind, name, t);
    }
    let meta = Meta {
        config: ckpt.model.config.clone(),
        stats: ckpt.stats,
        seed: ckpt.seed,
        epochs: ckpt.epochs,
        complete: ckpt.complete,
        schedules: ckpt.schedules.clone(),
        adam: ckpt.adam.each_ref().map(|s| {
            s.as_ref().map(|s| AdamMeta {
                config: s.config,
                lr: s.lr,
                step: s.step,
            })
        }),
        history: ckpt.history.clone(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    body.extend((json.len() as u64).to_le_bytes());
    body.extend(json);

    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend(CHECKPOINT_MAGIC);
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    out.extend((body.len() as u64).to_le_bytes());
    out.extend(Sha256::digest(&body));
    out.extend(body);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("block overruns body at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Corrupt("length overflow".into()))
    }
}

/// Parse and verify bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let body_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != body_len {
        return Err(CheckpointError::Truncated {
            expected: body_len,
            found: body.len() as u64,
        });
    }
    if Sha256::digest(body).as_slice() != &bytes[20..52] {
        return Err(CheckpointError::Checksum);
    }

    let mut r = Reader { buf: body, pos: 0 };
    let count = r.u32()?;
    let mut store = ParamStore::new();
    let mut moments: [BTreeMap<String, (Option<Tensor>, Option<Tensor>)>; 2] = Default::default();
    for _ in 0..count {
        let kind = r.u8()?;
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Corrupt("block name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len()?);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| CheckpointError::Corrupt(format!("shape overflow in `{name}`")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| CheckpointError::Corrupt("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(format!("`{name}`: {e}")))?;
        match kind {
            KIND_PARAM => store.insert(name, t),
            KIND_BUFFER => store.insert_buffer(name, t),
            KIND_ADAM_M | KIND_ADAM_V => {
                let (stage, param) = name
                    .split_once(':')
                    .ok_or_else(|| CheckpointError::Corrupt(format!("bad optimizer block `{name}`")))?;
                let idx = match stage {
                    "1" => 0,
                    "2" => 1,
                    _ => return Err(CheckpointError::Corrupt(format!("bad optimizer stage in `{name}`"))),
                };
                let slot = moments[idx].entry(param.to_string()).or_default();
                if kind == KIND_ADAM_M {
                    slot.0 = Some(t);
                } else {
                    slot.1 = Some(t);
                }
            }
            k => return Err(CheckpointError::Corrupt(format!("unknown block kind {k}"))),
        }
    }
    let json_len = r.len()?;
    let meta: Meta = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| CheckpointError::Corrupt(format!("metadata: {e}")))?;
    if r.pos != body.len() {
        return Err(CheckpointError::Corrupt("trailing bytes after metadata".into()));
    }

    let mut adam: [Option<AdamState>; 2] = [None, None];
    for (i, m) in meta.adam.into_iter().enumerate() {
        let Some(m) = m else { continue };
        let mut state = AdamState::new(m.config, m.lr);
        state.step = m.step;
        for (name, pair) in std::mem::take(&mut moments[i]) {
            match pair {
                (Some(m), Some(v)) => {
                    state.moments.insert(name, Moments { m, v });
                }
                _ => return Err(CheckpointError::Corrupt(format!("incomplete optimizer moments for `{name}`"))),
            }
        }
        adam[i] = Some(state);
    }
    if moments.iter().any(|m| !m.is_empty()) {
        return Err(CheckpointError::Corrupt("optimizer moments without optimizer state".into()));
    }
    meta.config
        .validate()
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok(Checkpoint {
        model: LoadModel {
            config: meta.config,
            params: store,
        },
        stats: meta.stats,
        seed: meta.seed,
        epochs: meta.epochs,
        complete: meta.complete,
        schedules: meta.schedules,
        adam,
        history: meta.history,
    })
}

/// Write through a temporary file so a crash never leaves a half-written
/// checkpoint under the final name.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, encode(ckpt)).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
