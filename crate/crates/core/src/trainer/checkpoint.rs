//! ECKP v1 checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ECKP"
//! 4       4     version (u32 LE) = 1
//! 8       4     header length H (u32 LE)
//! 12      H     UTF-8 JSON header (configs, progress, history, RNG, array directory)
//! 12+H    ...   arrays in directory order, little-endian f32 or f64
//! ```

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{AdamState, EpochRecord, TrainConfig};
use crate::error::{format_err, Result};
use crate::nnet::{ModelConfig, NormStats, ParamStore, Precision, Real};

pub const ECKP_MAGIC: &[u8; 4] = b"ECKP";
pub const ECKP_VERSION: u32 = 1;

/// Position of a ChaCha8 generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    pub stream: u64,
    /// u128 word position as decimal text.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed_hex = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self { seed_hex, stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || format_err("bad RNG state in checkpoint");
        if self.seed_hex.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse::<u128>().map_err(|_| bad())?);
        Ok(rng)
    }
}

/// Complete training state after `epoch` finished epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ParamStore<T>,
    pub stats: NormStats<T>,
    pub optimizer: AdamState<T>,
    pub epoch: usize,
    pub best_auroc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    pub rng: RngState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub precision: Precision,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub best_auroc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub adam_step: u64,
    pub history: Vec<EpochRecord>,
    pub rng: RngState,
    pub arrays: Vec<ArrayEntry>,
}

const GROUPS: [&str; 4] = ["params", "stats", "adam_m", "adam_v"];

impl<T: Real> Checkpoint<T> {
    fn stores(&self) -> [&ParamStore<T>; 4] {
        [&self.params, &self.stats, &self.optimizer.m, &self.optimizer.v]
    }

    pub fn header(&self) -> CheckpointHeader {
        let arrays = GROUPS
            .iter()
            .zip(self.stores())
            .flat_map(|(g, s)| {
                s.iter().map(move |p| ArrayEntry { group: g.to_string(), name: p.name.clone(), shape: p.shape.clone() })
            })
            .collect();
        CheckpointHeader {
            precision: T::PRECISION,
            model: self.model.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            best_auroc: self.best_auroc,
            best_epoch: self.best_epoch,
            adam_step: self.optimizer.step,
            history: self.history.clone(),
            rng: self.rng.clone(),
            arrays,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header())?;
        let n: usize = self.stores().iter().map(|s| s.numel()).sum();
        let mut out = Vec::with_capacity(12 + json.len() + n * T::BYTES);
        out.extend_from_slice(ECKP_MAGIC);
        out.extend_from_slice(&ECKP_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for s in self.stores() {
            for p in s.iter() {
                p.data.iter().for_each(|v| v.put_le(&mut out));
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (h, mut off) = read_checkpoint_header(bytes)?;
        if h.precision != T::PRECISION {
            return Err(format_err(format!("checkpoint holds {:?} arrays, expected {:?}", h.precision, T::PRECISION)));
        }
        let mut stores: [ParamStore<T>; 4] = Default::default();
        for a in &h.arrays {
            let gi = GROUPS.iter().position(|g| *g == a.group).ok_or_else(|| format_err(format!("unknown group {}", a.group)))?;
            let n: usize = a.shape.iter().product();
            let end = n
                .checked_mul(T::BYTES)
                .and_then(|b| off.checked_add(b))
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| format_err("truncated checkpoint"))?;
            let data = bytes[off..end].chunks_exact(T::BYTES).map(T::get_le).collect();
            stores[gi].push(a.name.clone(), a.shape.clone(), data).map_err(|e| format_err(e.to_string()))?;
            off = end;
        }
        if off != bytes.len() {
            return Err(format_err("trailing bytes after checkpoint arrays"));
        }
        let [params, stats, m, v] = stores;
        if !params.same_layout(&m) || !params.same_layout(&v) {
            return Err(format_err("optimizer moments do not mirror parameters"));
        }
        Ok(Self {
            model: h.model,
            train: h.train,
            params,
            stats,
            optimizer: AdamState { m, v, step: h.adam_step },
            epoch: h.epoch,
            best_auroc: h.best_auroc,
            best_epoch: h.best_epoch,
            history: h.history,
            rng: h.rng,
        })
    }
}

/// Prefix and JSON header; returns the header and the payload offset.
pub fn read_checkpoint_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 4 || &bytes[..4] != ECKP_MAGIC {
        return Err(format_err("not an ECKP checkpoint"));
    }
    if bytes.len() < 12 {
        return Err(format_err("truncated checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ECKP_VERSION {
        return Err(format_err(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = 12usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| format_err("truncated checkpoint"))?;
    let header = serde_json::from_slice(&bytes[12..body]).map_err(|e| format_err(format!("bad checkpoint header: {e}")))?;
    Ok((header, body))
}

pub fn save_checkpoint<T: Real>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ckpt.encode()?)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    Checkpoint::decode(&std::fs::read(path)?)
}
