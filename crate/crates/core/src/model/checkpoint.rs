//! Binary checkpoint format and the plain-text embedding import.
//!
//! Layout: magic `DEFGENCK`, u32 format version, length-prefixed config
//! JSON, 32-byte vocabulary hash, then named tensors as little-endian f32
//! payloads. Values are f64 in memory; storage is f32.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tokenizer::Vocabulary;

use super::config::ModelConfig;
use super::params::params_from_tensors;
use super::Model;

const MAGIC: &[u8; 8] = b"DEFGENCK";
const FORMAT_VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &Model, vocab_hash: &[u8; 32]) -> Vec<u8> {
    let config_json = serde_json::to_vec(&model.config).expect("config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    out.extend_from_slice(vocab_hash);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, tensor) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(model: &Model, vocab_hash: &[u8; 32], path: &Path) -> Result<()> {
    crate::fsio::atomic_write(path, &checkpoint_bytes(model, vocab_hash))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(Model, [u8; 32])> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::format("not a checkpoint file (bad magic bytes)"));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let config_len = cur.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(cur.take(config_len)?)
        .map_err(|e| Error::format(format!("bad config block: {e}")))?;
    config.validate()?;
    let mut vocab_hash = [0u8; 32];
    vocab_hash.copy_from_slice(cur.take(32)?);
    let n_tensors = cur.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::format("tensor name is not UTF-8"))?;
        let ndim = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(cur.f32()? as f64);
        }
        tensors.push((name, Tensor::new(data, shape)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::format("trailing bytes after checkpoint payload"));
    }
    let params = params_from_tensors(&config, tensors)?;
    Ok((Model { config, params }, vocab_hash))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, [u8; 32])> {
    parse_checkpoint(&std::fs::read(path)?)
}

/// Check a checkpoint's stored vocabulary hash against the vocabulary the
/// caller intends to use with it.
pub fn verify_vocab_hash(stored: &[u8; 32], vocab: &Vocabulary) -> Result<()> {
    if stored != &vocab.content_hash() {
        return Err(Error::contract(
            "checkpoint was trained with a different vocabulary (hash mismatch)",
        ));
    }
    Ok(())
}

/// Initialize decoder token-embedding rows from a plain-text file whose first
/// line is `count dim` and whose rows are `word v1 .. v_dim`. A word matches
/// a vocabulary token by byte content, with and without the leading-space
/// marker. Returns how many rows were initialized.
pub fn import_decoder_embeddings(
    model: &mut Model,
    vocab: &Vocabulary,
    text: &str,
) -> Result<usize> {
    let d = model.config.d_dec;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format("embedding file is empty"))?;
    let mut head = header.split_whitespace();
    let (count, dim): (usize, usize) = match (head.next(), head.next()) {
        (Some(c), Some(dm)) => (
            c.parse().map_err(|_| Error::Parse {
                line: 1,
                message: format!("bad count {c:?}"),
            })?,
            dm.parse().map_err(|_| Error::Parse {
                line: 1,
                message: format!("bad dim {dm:?}"),
            })?,
        ),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "first line must be `count dim`".into(),
            })
        }
    };
    if dim != d {
        return Err(Error::contract(format!(
            "embedding dim {dim} does not match decoder width {d}"
        )));
    }

    let mut id_by_bytes: HashMap<Vec<u8>, u32> = HashMap::new();
    for id in 0..vocab.size() as u32 {
        if !Vocabulary::is_special(id) {
            id_by_bytes.insert(vocab.token_as_bytes(id)?.to_vec(), id);
        }
    }

    let table = model.params.get_mut("dec.tok_emb");
    let mut initialized = 0usize;
    let mut seen = 0usize;
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        seen += 1;
        let mut parts = line.split_whitespace();
        let word = parts.next().ok_or(Error::Parse {
            line: i + 1,
            message: "missing word".into(),
        })?;
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("bad float {p:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {dim} values, got {}", values.len()),
            });
        }
        let mut candidates = vec![word.as_bytes().to_vec()];
        let mut with_marker = b" ".to_vec();
        with_marker.extend_from_slice(word.as_bytes());
        candidates.push(with_marker);
        for bytes in candidates {
            if let Some(&id) = id_by_bytes.get(&bytes) {
                let row = id as usize * d;
                table.data_mut()[row..row + d].copy_from_slice(&values);
                initialized += 1;
            }
        }
    }
    if seen != count {
        return Err(Error::format(format!(
            "embedding file declares {count} rows but contains {seen}"
        )));
    }
    Ok(initialized)
}
