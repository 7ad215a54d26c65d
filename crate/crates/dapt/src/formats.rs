//! On-disk formats: tokenizer directories, merge plans, checkpoints and
//! loss histories.
//!
//! # Checkpoint layout
//!
//! All integers are little-endian.
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `DAPTCKPT` |
//! | 4 | format version (`u32`) |
//! | 8 | header length `h` (`u64`) |
//! | h | UTF-8 JSON header `{config, meta, tensors: [{name, rows, cols}]}` |
//! | rest | every tensor in header order, row-major, as `f64` |
//!
//! Loading checks the magic, the version, every tensor shape against the
//! configuration and that the payload length matches exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use dapt_core::model::{Checkpoint, CheckpointMeta, ModelConfig, FORMAT_VERSION};
use dapt_core::pretrain::LossRecord;
use dapt_core::tokenizer::{MergePlan, Vocabulary, DEFAULT_SPECIALS};
use dapt_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{DaptError, Result};

pub const VOCAB_FILE: &str = "vocab.json";
pub const MERGES_FILE: &str = "merges.txt";
pub const MERGES_HEADER: &str = "#version: 0.2";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DAPTCKPT";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| DaptError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| DaptError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DaptError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

/// Writes `vocab.json` (token → id, sorted by token) and `merges.txt`
/// (version header, then one `left right` pair per line in rank order).
pub fn save_vocabulary(dir: &Path, vocab: &Vocabulary) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DaptError::io(dir, e))?;
    write_file(&dir.join(VOCAB_FILE), &to_json(vocab.token_to_id()))?;
    let mut merges = String::from(MERGES_HEADER);
    merges.push('\n');
    for (l, r) in vocab.merges() {
        merges.push_str(l);
        merges.push(' ');
        merges.push_str(r);
        merges.push('\n');
    }
    write_file(&dir.join(MERGES_FILE), merges.as_bytes())
}

/// Loads a tokenizer directory. The special tokens are whichever of the
/// conventional five the vocabulary contains.
pub fn load_vocabulary(dir: &Path) -> Result<Vocabulary> {
    let vocab_path = dir.join(VOCAB_FILE);
    let token_to_id: BTreeMap<String, u32> =
        serde_json::from_str(&read_text(&vocab_path)?).map_err(|e| DaptError::format(&vocab_path, e.to_string()))?;
    let merges_path = dir.join(MERGES_FILE);
    let text = read_text(&merges_path)?;
    let mut merges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.starts_with("#version") {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        match line.split_once(' ') {
            Some((l, r)) if !l.is_empty() && !r.is_empty() && !r.contains(' ') => merges.push((l.into(), r.into())),
            _ => return Err(DaptError::record(&merges_path, i + 1, format!("expected `left right`, got {line:?}"))),
        }
    }
    let specials: Vec<&str> = DEFAULT_SPECIALS.iter().copied().filter(|s| token_to_id.contains_key(*s)).collect();
    Vocabulary::new(token_to_id, merges, &specials).map_err(|e| DaptError::format(dir, e.to_string()))
}

pub fn save_merge_plan(path: &Path, plan: &MergePlan) -> Result<()> {
    write_file(path, &to_json(plan))
}

pub fn load_merge_plan(path: &Path) -> Result<MergePlan> {
    serde_json::from_str(&read_text(path)?).map_err(|e| DaptError::format(path, e.to_string()))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &to_json(value))
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let named = ckpt.params.named();
    let header = Header {
        config: ckpt.config.clone(),
        meta: CheckpointMeta { format_version: FORMAT_VERSION, ..ckpt.meta.clone() },
        tensors: named.iter().map(|(n, m)| TensorEntry { name: n.clone(), rows: m.rows(), cols: m.cols() }).collect(),
    };
    let header = serde_json::to_vec(&header).expect("serializable header");
    let payload: usize = named.iter().map(|(_, m)| m.as_slice().len() * 8).sum();
    let mut out = Vec::with_capacity(20 + header.len() + payload);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, m) in named {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |m: String| DaptError::format(path, m);
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if header_len > body.len() {
        return Err(bad("truncated header".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[..header_len]).map_err(|e| bad(format!("header: {e}")))?;
    let mut payload = &body[header_len..];
    let expected: usize = header.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
    if payload.len() != expected {
        return Err(bad(format!("payload has {} bytes, header describes {expected}", payload.len())));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let (chunk, rest) = payload.split_at(t.rows * t.cols * 8);
        payload = rest;
        let data = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        tensors.push((t.name, Matrix::from_vec(t.rows, t.cols, data)?));
    }
    Checkpoint::from_tensors(header.config, tensors, header.meta).map_err(|e| bad(e.to_string()))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| DaptError::io(parent, e))?;
        }
        fs::File::create(path).map_err(|e| DaptError::io(path, e))?
    };
    let mut w = BufWriter::new(file);
    w.write_all(&encode_checkpoint(ckpt)).map_err(|e| DaptError::io(path, e))?;
    w.flush().map_err(|e| DaptError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| DaptError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// `step,loss,lr` with a header row. Floats use the shortest exact
/// representation.
pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("step,loss,lr\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.step, r.loss, r.lr));
    }
    out
}

pub fn save_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    write_file(path, loss_csv(history).as_bytes())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = match fields.as_slice() {
            [s, l, r] => s.parse().ok().zip(l.parse().ok()).zip(r.parse().ok()),
            _ => None,
        };
        let ((step, loss), lr) = parsed.ok_or_else(|| DaptError::record(path, i + 1, "expected step,loss,lr"))?;
        out.push(LossRecord { step, loss, lr });
    }
    Ok(out)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_file(path, bytes)
}
