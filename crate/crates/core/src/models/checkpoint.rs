//! Binary checkpoint: `HDKP` | version (u32 LE) | header length (u64 LE) |
//! JSON header | f64 LE payload | SHA-256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{LayerGroup, ModelConfig};
use super::graph::{build_model, param_layout, ModelGraph, Preprocessing};
use crate::engine::{ParamId, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HDKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const PAYLOAD_ORDER: [&str; 4] = ["value", "grad", "adam_m", "adam_v"];
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 4 + 4 + 8;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    preprocessing: Option<Preprocessing>,
    rng_seed: String,
    rng_word_pos: String,
    payload_order: Vec<String>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    group: LayerGroup,
    trainable: bool,
    step_count: u64,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint(model: &ModelGraph) -> Vec<u8> {
    let p = model.params();
    let (seed, word_pos) = model.rng_state();
    let header = Header {
        model: model.config().clone(),
        preprocessing: model.preprocessing.clone(),
        rng_seed: hex::encode(seed),
        rng_word_pos: word_pos.to_string(),
        payload_order: PAYLOAD_ORDER.iter().map(|s| s.to_string()).collect(),
        params: p
            .ids()
            .map(|id| ParamEntry {
                name: p.name(id).to_string(),
                shape: p.value(id).shape().to_vec(),
                group: model.group_of(id),
                trainable: p.trainable(id),
                step_count: p.step_count(id),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + 32 * p.total_elements() + DIGEST_LEN);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for id in p.ids() {
        let (m, v) = p.moments(id);
        for t in [p.value(id), p.grad(id), m, v] {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelGraph> {
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(bad("file too short"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("format version {version}, this build reads {CHECKPOINT_VERSION}")));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("integrity digest mismatch"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(PREFIX_LEN))
        .filter(|&end| end <= body.len())
        .ok_or_else(|| bad("header length exceeds file"))?;
    let header: Header =
        serde_json::from_slice(&body[PREFIX_LEN..header_end]).map_err(|e| bad(format!("header: {e}")))?;
    if header.payload_order != PAYLOAD_ORDER {
        return Err(bad("unsupported payload order"));
    }

    let layout = param_layout(&header.model).map_err(|e| bad(format!("stored config does not build: {e}")))?;
    if layout.len() != header.params.len() {
        return Err(bad("parameter list does not match the stored config"));
    }
    for (spec, entry) in layout.iter().zip(&header.params) {
        if spec.name != entry.name || spec.shape != entry.shape || spec.group != entry.group {
            return Err(bad(format!("parameter {} does not match the stored config", entry.name)));
        }
    }
    let payload = &body[header_end..];
    let elements: usize = layout.iter().map(|s| s.shape.iter().product::<usize>()).sum();
    if elements.checked_mul(4 * 8) != Some(payload.len()) {
        return Err(bad(format!("payload holds {} bytes, config needs {} values", payload.len(), 4 * elements)));
    }

    let seed: [u8; 32] = hex::decode(&header.rng_seed)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| bad("rng seed is not 32 hex bytes"))?;
    let word_pos: u128 = header.rng_word_pos.parse().map_err(|_| bad("bad rng position"))?;

    let mut model = build_model(&header.model, 0).map_err(|e| bad(e.to_string()))?;
    let mut floats = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for (i, entry) in header.params.iter().enumerate() {
        let n: usize = entry.shape.iter().product();
        let mut take = || Tensor::from_parts(entry.shape.clone(), floats.by_ref().take(n).collect());
        let (value, grad, m, v) = (take(), take(), take(), take());
        if value.data().iter().any(|x| !x.is_finite()) {
            return Err(bad(format!("parameter {} holds non-finite values", entry.name)));
        }
        let id = ParamId(i);
        *model.params_mut().value_mut(id) = value;
        model.params_mut().restore(id, grad, m, v, entry.trainable, entry.step_count);
    }
    model.set_rng_state(seed, word_pos);
    model.preprocessing = header.preprocessing;
    Ok(model)
}

pub fn save_checkpoint(model: &ModelGraph, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelGraph> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
