//! Binary checkpoint bundles.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every tensor as little-endian `f64` in header order. The
//! header carries the tensor index (group, name, shape, dtype, byte offset),
//! the config snapshot, the iteration counter and a SHA-256 of the payload.
//! Random streams are keyed by `(seed, iteration, …)`, so the seed and the
//! next iteration are the whole generator state.

use std::fs;
use std::path::Path;

use mrvm_core::diff::{ParamStore, Tensor};
use mrvm_core::model::Model;
use mrvm_core::mrvm::MrvmMode;
use mrvm_core::optim::{Adam, AdamConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MRVMCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    /// Next iteration to run.
    pub iteration: u64,
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Adam,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: [usize; 2],
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: u64,
    next_iter: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    phase: Phase,
    iteration: u64,
    mode: String,
    config: TrainConfig,
    rng: RngState,
    param_seed: u64,
    adam_step: u64,
    adam: [f64; 4],
    payload_bytes: u64,
    sha256: String,
    tensors: Vec<TensorEntry>,
}

const GROUPS: [&str; 4] = ["params", "ema", "adam.m", "adam.v"];

fn named(s: &ParamStore) -> (Vec<&str>, Vec<&Tensor>) {
    (s.names().iter().map(String::as_str).collect(), s.tensors().iter().collect())
}

fn groups(ck: &Checkpoint) -> [(Vec<&str>, Vec<&Tensor>); 4] {
    let p = &ck.model.params;
    [
        named(p),
        named(&ck.model.ema),
        (p.names().iter().map(String::as_str).collect(), ck.optimizer.m.iter().collect()),
        (p.names().iter().map(String::as_str).collect(), ck.optimizer.v.iter().collect()),
    ]
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (group, (names, ts)) in GROUPS.iter().zip(groups(ck)) {
        if names.len() != ts.len() {
            return Err(Error::Invalid(format!("checkpoint group {group}: {} names for {} tensors", names.len(), ts.len())));
        }
        for (name, t) in names.iter().zip(ts) {
            tensors.push(TensorEntry {
                group: group.to_string(),
                name: name.to_string(),
                shape: [t.rows(), t.cols()],
                dtype: "f64".into(),
                offset: payload.len() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let AdamConfig { lr, beta1, beta2, eps } = ck.optimizer.config;
    let header = Header {
        version: VERSION,
        phase: ck.phase,
        iteration: ck.iteration,
        mode: ck.model.config.mode.as_str().into(),
        config: ck.config.clone(),
        rng: RngState { seed: ck.config.seed, next_iter: ck.iteration },
        param_seed: ck.model.params.rng_seed,
        adam_step: ck.optimizer.step,
        adam: [lr, beta1, beta2, eps],
        payload_bytes: payload.len() as u64,
        sha256: hex(&Sha256::digest(&payload)),
        tensors,
    };
    let h = serde_json::to_vec(&header).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + h.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |m: String| Error::data(path, format!("corrupt checkpoint: {m}"));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..).unwrap_or_default();
    if hlen > body.len() {
        return Err(bad("header length exceeds file size".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
    let payload = &body[hlen..];
    if payload.len() as u64 != header.payload_bytes {
        return Err(bad(format!("payload is {} bytes, header says {}", payload.len(), header.payload_bytes)));
    }
    if hex(&Sha256::digest(payload)) != header.sha256 {
        return Err(bad("payload checksum mismatch".into()));
    }
    let mode = MrvmMode::parse(&header.mode).ok_or_else(|| bad(format!("unknown mode {:?}", header.mode)))?;
    let mut stores = [ParamStore::new(header.param_seed), ParamStore::new(header.param_seed), ParamStore::new(0), ParamStore::new(0)];
    for e in &header.tensors {
        let g = GROUPS.iter().position(|g| *g == e.group).ok_or_else(|| bad(format!("unknown group {:?}", e.group)))?;
        if e.dtype != "f64" {
            return Err(bad(format!("{}: dtype {}", e.name, e.dtype)));
        }
        let n = e.shape[0] * e.shape[1];
        let start = e.offset as usize;
        let raw = payload.get(start..start + 8 * n).ok_or_else(|| bad(format!("{}: data out of range", e.name)))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        stores[g].insert(&e.name, Tensor::from_vec(e.shape[0], e.shape[1], data)).map_err(|err| bad(err.to_string()))?;
    }
    let [params, ema, m, v] = stores;
    if m.names() != params.names() || v.names() != params.names() {
        return Err(bad("optimizer moments do not match parameters".into()));
    }
    let [lr, beta1, beta2, eps] = header.adam;
    let optimizer = Adam { config: AdamConfig { lr, beta1, beta2, eps }, step: header.adam_step, m: m.tensors().to_vec(), v: v.tensors().to_vec() };
    let model = Model { config: header.config.model.to_model_config(mode), params, ema };
    Ok(Checkpoint { phase: header.phase, iteration: header.iteration, config: header.config, model, optimizer })
}

/// Writes through a temporary file so an interrupted save never leaves a
/// truncated checkpoint behind.
pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
