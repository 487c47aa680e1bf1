//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `HYCK`, version `u16`, metadata length
//! `u32` and JSON metadata, tensor count `u32`, then per tensor: kind `u8`
//! (0 parameter, 1 first moment, 2 second moment), group `u8`, name length
//! `u32` and UTF-8 name, rank `u32`, dims `u32` each, `f32` values. A CRC32
//! of everything before it closes the file.

use std::collections::HashMap;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AdamW, TrainConfig, TrainError, Trainer};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::fsutil::{put_f32s, write_atomic, Reader};
use crate::nn::ParamGroup;
use crate::scheduler::{NoiseSchedule, ScheduleKind};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HYCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (reader supports {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Exact per-step variances as IEEE-754 bit patterns.
    pub beta_bits: Vec<u64>,
}

impl ScheduleRecord {
    pub fn of(s: &NoiseSchedule) -> Self {
        Self {
            kind: s.kind,
            steps: s.steps(),
            beta_min: s.beta_min,
            beta_max: s.beta_max,
            beta_bits: s.beta.iter().map(|b| b.to_bits()).collect(),
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CheckpointError> {
        let beta = self.beta_bits.iter().map(|&b| f64::from_bits(b)).collect();
        let mut s = NoiseSchedule::from_betas(beta).map_err(|e| CheckpointError::Format(e.to_string()))?;
        s.kind = self.kind;
        s.beta_min = self.beta_min;
        s.beta_max = self.beta_max;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngRecord {
    pub seed: Vec<u8>,
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl RngRecord {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn rng(&self) -> Result<ChaCha8Rng, CheckpointError> {
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| CheckpointError::Format("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| CheckpointError::Format("bad rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub model: DenoiserConfig,
    pub training: TrainConfig,
    pub schedule: ScheduleRecord,
    pub step: u64,
    pub optimizer_t: u64,
    pub rng: RngRecord,
    pub active_adapters: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Param,
    FirstMoment,
    SecondMoment,
}

impl EntryKind {
    fn tag(self) -> u8 {
        match self {
            EntryKind::Param => 0,
            EntryKind::FirstMoment => 1,
            EntryKind::SecondMoment => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(EntryKind::Param),
            1 => Some(EntryKind::FirstMoment),
            2 => Some(EntryKind::SecondMoment),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub kind: EntryKind,
    pub group: ParamGroup,
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Everything needed to resume training or to sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Metadata,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn capture(tr: &Trainer) -> Self {
        let store = &tr.model.store;
        let mut tensors = Vec::new();
        for id in store.ids() {
            let t = store.get(id);
            tensors.push(TensorEntry {
                kind: EntryKind::Param,
                group: store.group(id),
                name: store.name(id).to_string(),
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            });
            for (kind, map) in [(EntryKind::FirstMoment, &tr.optimizer.m), (EntryKind::SecondMoment, &tr.optimizer.v)] {
                if let Some(buf) = map.get(&id) {
                    tensors.push(TensorEntry {
                        kind,
                        group: store.group(id),
                        name: store.name(id).to_string(),
                        shape: t.shape().to_vec(),
                        data: buf.clone(),
                    });
                }
            }
        }
        Self {
            meta: Metadata {
                model: tr.model.config.clone(),
                training: tr.config.clone(),
                schedule: ScheduleRecord::of(&tr.schedule),
                step: tr.step,
                optimizer_t: tr.optimizer.t,
                rng: RngRecord::of(&tr.rng),
                active_adapters: tr.model.active_adapters(),
            },
            tensors,
        }
    }

    /// Rebuilds the model with stored parameter values.
    pub fn model(&self) -> Result<Denoiser, CheckpointError> {
        let mut model =
            Denoiser::build(&self.meta.model, 0).map_err(|e| CheckpointError::Format(e.to_string()))?;
        model.retain_adapters(&self.meta.active_adapters);
        let params: HashMap<&str, &TensorEntry> = self
            .tensors
            .iter()
            .filter(|e| e.kind == EntryKind::Param)
            .map(|e| (e.name.as_str(), e))
            .collect();
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let e = params
                .get(name.as_str())
                .ok_or_else(|| CheckpointError::Format(format!("missing parameter {name}")))?;
            if e.shape != model.store.get(id).shape() {
                return Err(CheckpointError::Format(format!(
                    "parameter {name} has shape {:?}, model expects {:?}",
                    e.shape,
                    model.store.get(id).shape()
                )));
            }
            model
                .store
                .set_data(id, e.data.clone())
                .map_err(|e| CheckpointError::Format(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CheckpointError> {
        self.meta.schedule.schedule()
    }

    /// Restores a trainer in the exact state it was captured in.
    pub fn restore(&self) -> Result<Trainer, TrainError> {
        let fmt = |e: CheckpointError| TrainError::Config(e.to_string());
        let model = self.model().map_err(fmt)?;
        let schedule = self.schedule().map_err(fmt)?;
        let mut tr = Trainer::new(model, schedule, self.meta.training.clone())?;
        let mut opt = AdamW::new(self.meta.training.optimizer);
        opt.t = self.meta.optimizer_t;
        for e in self.tensors.iter().filter(|e| e.kind != EntryKind::Param) {
            let id = tr
                .model
                .store
                .find(&e.name)
                .ok_or_else(|| TrainError::Config(format!("optimizer state for unknown parameter {}", e.name)))?;
            match e.kind {
                EntryKind::FirstMoment => opt.m.insert(id, e.data.clone()),
                _ => opt.v.insert(id, e.data.clone()),
            };
        }
        tr.optimizer = opt;
        tr.rng = self.meta.rng.rng().map_err(fmt)?;
        tr.step = self.meta.step;
        Ok(tr)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for e in &self.tensors {
            out.push(e.kind.tag());
            out.push(e.group.tag());
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_f32s(&mut out, &e.data);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses a checkpoint. Magic, version and checksum are verified, in
    /// that order, before any content is decoded.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 {
            return Err(CheckpointError::Truncated);
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 6 {
            return Err(CheckpointError::Truncated);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < 10 {
            return Err(CheckpointError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::ChecksumMismatch { stored, computed });
        }
        let mut r = Reader::new(&body[6..]);
        let bad = || CheckpointError::Format("unexpected end of data".into());
        let meta_len = r.u32().ok_or_else(bad)? as usize;
        let meta: Metadata = serde_json::from_slice(r.bytes(meta_len).ok_or_else(bad)?)
            .map_err(|e| CheckpointError::Format(format!("metadata: {e}")))?;
        let count = r.u32().ok_or_else(bad)?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let kind = EntryKind::from_tag(r.u8().ok_or_else(bad)?)
                .ok_or_else(|| CheckpointError::Format("unknown entry kind".into()))?;
            let group = ParamGroup::from_tag(r.u8().ok_or_else(bad)?)
                .ok_or_else(|| CheckpointError::Format("unknown parameter group".into()))?;
            let name_len = r.u32().ok_or_else(bad)? as usize;
            let name = String::from_utf8(r.bytes(name_len).ok_or_else(bad)?.to_vec())
                .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?;
            let rank = r.u32().ok_or_else(bad)? as usize;
            let shape: Vec<usize> = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Option<_>>()
                .ok_or_else(bad)?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(bad)?;
            let data = r.f32s(n).ok_or_else(bad)?;
            tensors.push(TensorEntry {
                kind,
                group,
                name,
                shape,
                data,
            });
        }
        if r.remaining() != 0 {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        Ok(Self { meta, tensors })
    }
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<(), CheckpointError> {
    write_atomic(path, &Checkpoint::capture(trainer).to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
