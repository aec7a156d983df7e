//! Binary checkpoints.
//!
//! Layout: the 6 ASCII bytes `AMCNN1`, a little-endian `u64` byte length, a
//! UTF-8 JSON header of that length, then every tensor's values as
//! little-endian `f64` in header order. The header holds the model
//! configuration, the vocabulary in id order, and `{name, shape}` for each
//! tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 6] = b"AMCNN1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let entries = model.params.entries();
    let header = Header {
        version: FORMAT_VERSION,
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        tensors: entries
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let total: usize = entries.iter().map(|(_, t)| t.numel()).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 8 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &entries {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("missing AMCNN1 magic".into()));
    }
    let mut pos = MAGIC.len();
    let hlen = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
    pos += 8;
    let hend = pos
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[pos..hend]).map_err(|e| bad(format!("bad header: {e}")))?;
    pos = hend;
    if header.version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    header.config.validate()?;
    let vocab = Vocabulary::from_tokens(header.vocab).map_err(|e| bad(e.to_string()))?;
    let mut params = ModelParams::init(&header.config, &vocab, None)?;
    let expected: Vec<TensorEntry> = params
        .entries()
        .into_iter()
        .map(|(name, t)| TensorEntry {
            name,
            shape: t.shape().to_vec(),
        })
        .collect();
    if expected != header.tensors {
        return Err(bad("tensor list does not match the configuration".into()));
    }
    for t in params.tensors_mut() {
        let need = t.numel() * 8;
        if bytes.len() - pos < need {
            return Err(bad("truncated tensor data".into()));
        }
        for (v, chunk) in t.data_mut().iter_mut().zip(bytes[pos..pos + need].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        pos += need;
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    for (ch, &p) in params.attention.iter_mut().zip(&header.config.keep_probs) {
        if let Some(s) = ch.scalar.as_mut() {
            s.keep_prob = p;
        }
    }
    Ok(Model {
        config: header.config,
        vocab,
        params,
    })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}
