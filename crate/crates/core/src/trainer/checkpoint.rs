//! Checkpoint file layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "CTTSCKPT"
//! version     u32      FORMAT_VERSION
//! meta_len    u32
//! meta        meta_len bytes of UTF-8 JSON: configs, speakers, counters and
//!             the tensor directory [{name, rows, cols}]
//! data        for every directory entry: parameter, first moment, second
//!             moment, each rows*cols f64 values
//! crc32       u32 over every preceding byte
//! ```
//!
//! Tensors are stored as f64 so that a resumed run continues bit-exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CheckpointBundle, OptimizerState, TrainCfg};
use crate::acoustic::{AcousticModelState, Mat, ModelCfg, ParamSet, SpeakerTable};
use crate::dsp::MelCfg;
use crate::{fsutil, Error, Result};

pub const MAGIC: &[u8; 8] = b"CTTSCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const EXTENSION: &str = "ctck";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    model_cfg: ModelCfg,
    mel_cfg: MelCfg,
    speakers: SpeakerTable,
    seed_lineage: Vec<u64>,
    step: u64,
    stage_start: u64,
    train_cfg: TrainCfg,
    corpus_fingerprint: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn encode_checkpoint(b: &CheckpointBundle) -> Vec<u8> {
    let p = &b.model.params;
    let meta = Meta {
        model_cfg: b.model.cfg.clone(),
        mel_cfg: b.model.mel_cfg,
        speakers: b.model.speakers.clone(),
        seed_lineage: b.model.seed_lineage.clone(),
        step: b.step,
        stage_start: b.stage_start,
        train_cfg: b.train_cfg.clone(),
        corpus_fingerprint: b.corpus_fingerprint.clone(),
        tensors: p
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.to_string(),
                rows: m.rows,
                cols: m.cols,
            })
            .collect(),
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(16 + meta.len() + 24 * p.scalar_count() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for i in 0..p.len() {
        for m in [&p.tensors()[i], &b.optimizer.m[i], &b.optimizer.v[i]] {
            for x in &m.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointBundle> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    if bytes.len() < 20 {
        return Err(bad("checksum mismatch: file truncated"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(bad("checksum mismatch: file corrupt or truncated"));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} not supported (expected {FORMAT_VERSION})"
        )));
    }
    let meta_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let meta_end = 16usize
        .checked_add(meta_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| bad("metadata overruns file"))?;
    let meta: Meta = serde_json::from_slice(&body[16..meta_end])
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let mut data = body[meta_end..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let expected: usize = meta.tensors.iter().map(|t| 3 * t.rows * t.cols).sum();
    if body.len() - meta_end != 8 * expected {
        return Err(bad("tensor data size does not match the directory"));
    }
    let mut params = ParamSet::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for t in &meta.tensors {
        let mut take = || {
            Mat::from_vec(
                t.rows,
                t.cols,
                data.by_ref().take(t.rows * t.cols).collect(),
            )
        };
        params.push(t.name.clone(), take());
        m.push(take());
        v.push(take());
    }
    Ok(CheckpointBundle {
        model: AcousticModelState {
            cfg: meta.model_cfg,
            params,
            speakers: meta.speakers,
            mel_cfg: meta.mel_cfg,
            seed_lineage: meta.seed_lineage,
        },
        optimizer: OptimizerState { m, v },
        step: meta.step,
        stage_start: meta.stage_start,
        train_cfg: meta.train_cfg,
        corpus_fingerprint: meta.corpus_fingerprint,
    })
}

pub fn save_checkpoint(b: &CheckpointBundle, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode_checkpoint(b))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointBundle> {
    decode_checkpoint(&fsutil::read(path)?)
}

/// `<dir>/step_<step>.ctck`, zero-padded so lexical order is step order.
pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:08}.{EXTENSION}"))
}

/// Highest-step checkpoint in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(dir, e)),
    };
    let mut best = None;
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let is_ckpt = p.extension().is_some_and(|x| x == EXTENSION)
            && p.file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with("step_"));
        if is_ckpt && best.as_ref().is_none_or(|b: &PathBuf| p > *b) {
            best = Some(p);
        }
    }
    Ok(best)
}
