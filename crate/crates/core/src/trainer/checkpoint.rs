//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "A2VCKPT\0"
//! version   u32      CHECKPOINT_VERSION
//! meta_len  u64      byte length of the metadata block
//! metadata  UTF-8    one key=value per line
//! blobs     f64 LE   parameters, then Adam first moments, then second
//!                    moments, each tensor in canonical parameter order
//! ```
//!
//! Metadata keys: `encoder_config` and `train_config` (single-line JSON),
//! `global_iter`, `adam_t`, `seed` and `tensors` (`name:d0xd1,...`). All
//! training randomness is derived from `(seed, iteration)`, so `seed` and
//! `global_iter` fully capture the RNG state.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::adam::AdamState;
use super::TrainConfig;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"A2VCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder_config: EncoderConfig,
    pub train_config: TrainConfig,
    pub params: EncoderParams,
    pub adam: AdamState,
    pub global_iter: u64,
}

impl Checkpoint {
    pub fn seed(&self) -> u64 {
        self.train_config.seed
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let named = self.params.named_tensors();
        let mut meta = String::new();
        writeln!(meta, "encoder_config={}", serde_json::to_string(&self.encoder_config)?).unwrap();
        writeln!(meta, "train_config={}", serde_json::to_string(&self.train_config)?).unwrap();
        writeln!(meta, "global_iter={}", self.global_iter).unwrap();
        writeln!(meta, "adam_t={}", self.adam.t).unwrap();
        writeln!(meta, "seed={}", self.train_config.seed).unwrap();
        let shapes: Vec<String> = named
            .iter()
            .map(|(n, t)| {
                let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
                format!("{n}:{}", dims.join("x"))
            })
            .collect();
        writeln!(meta, "tensors={}", shapes.join(",")).unwrap();

        let n: usize = named.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(24 + meta.len() + 24 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        let blobs = named
            .iter()
            .map(|(_, t)| t.values())
            .chain(self.adam.m.iter().map(Vec::as_slice))
            .chain(self.adam.v.iter().map(Vec::as_slice));
        for blob in blobs {
            for x in blob {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic; not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let meta_end = 20usize
            .checked_add(usize::try_from(meta_len).map_err(|_| bad("metadata length overflow"))?)
            .filter(|e| *e <= bytes.len())
            .ok_or_else(|| bad("truncated metadata"))?;
        let meta = std::str::from_utf8(&bytes[20..meta_end]).map_err(|_| bad("metadata is not UTF-8"))?;
        let mut kv = BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| bad("malformed metadata line"))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Checkpoint(format!("missing metadata key {k}")));
        let int = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata key {k} is not an integer")))
        };
        let encoder_config: EncoderConfig = serde_json::from_str(get("encoder_config")?)?;
        let train_config: TrainConfig = serde_json::from_str(get("train_config")?)?;
        let global_iter = int("global_iter")?;
        let adam_t = int("adam_t")?;
        if int("seed")? != train_config.seed {
            return Err(bad("seed disagrees with train_config"));
        }
        encoder_config.validate()?;

        let template = EncoderParams::zeros(&encoder_config);
        let named = template.named_tensors();
        let expected: Vec<String> = named
            .iter()
            .map(|(n, t)| {
                let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
                format!("{n}:{}", dims.join("x"))
            })
            .collect();
        if get("tensors")? != expected.join(",") {
            return Err(bad("tensor layout does not match the encoder config"));
        }
        let lens: Vec<usize> = named.iter().map(|(_, t)| t.len()).collect();
        let total: usize = lens.iter().sum();
        let body = &bytes[meta_end..];
        if body.len() != 3 * total * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} bytes of tensor data, found {} (truncated or corrupt)",
                3 * total * 8,
                body.len()
            )));
        }
        let mut floats = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = || -> Vec<Vec<f64>> { lens.iter().map(|n| floats.by_ref().take(*n).collect()).collect() };
        let values = take();
        let m = take();
        let v = take();
        let params = EncoderParams::from_values(&encoder_config, values)?;
        Ok(Self {
            encoder_config,
            train_config,
            params,
            adam: AdamState { m, v, t: adam_t },
            global_iter,
        })
    }
}

/// Writes via a temporary sibling file and a rename so that a failed write
/// never leaves a partial checkpoint under `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
