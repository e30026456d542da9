//! Portable checkpoint container.
//!
//! ```text
//! magic        8 bytes  "STARCKPT"
//! version      u32
//! config_len   u32, then the config text (UTF-8)
//! epoch        u64
//! stage        u32
//! baseline     f64      (NaN when unset)
//! count        u32      number of tensors
//! manifest     per tensor: u32 name_len, name, u32 rank, rank × u32 dims,
//!              u64 byte offset into the data section
//! header_crc   u32      CRC-32 of everything above
//! data         f64 values of every tensor, in manifest order
//! data_crc     u32      CRC-32 of the data section
//! ```
//!
//! All integers and floats are little-endian. Tensor names are
//! `param/<name>`, `adam/<name>/m`, `adam/<name>/v` and `adam/<name>/t`
//! (the step count as a one-element tensor).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::{ConfigError, RunConfig};
use crate::tensor::{Adam, AdamState, Tensor};
use crate::trainer::{Stage, ThetaBundle, TrainError, Trainer};
use crate::Real;

pub const MAGIC: &[u8; 8] = b"STARCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("checkpoint {section} failed its integrity check")]
    Integrity { section: &'static str },
    #[error("parameter `{name}`: checkpoint shape {found:?} does not match configured shape {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint is missing tensor `{0}`")]
    Missing(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: u64,
    pub stage: Stage,
    pub baseline: Option<f64>,
    pub tensors: Vec<(String, Tensor<Real>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::Truncated {
                offset: self.at,
                needed: n,
                len: self.bytes.len(),
            });
        };
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    /// Captures parameters, optimizer state and progress of a trainer.
    pub fn from_trainer(trainer: &Trainer<Real>, config: &RunConfig) -> Self {
        let store = &trainer.bundle.store;
        let mut tensors: Vec<(String, Tensor<Real>)> =
            store.iter().map(|(_, p)| (format!("param/{}", p.name), p.value.clone())).collect();
        let opt = trainer.optimizer();
        for (&id, st) in opt.ids().iter().zip(opt.states()) {
            let name = &store.get(id).name;
            tensors.push((format!("adam/{name}/m"), st.first_moment.clone()));
            tensors.push((format!("adam/{name}/v"), st.second_moment.clone()));
            tensors.push((format!("adam/{name}/t"), Tensor::vector(vec![st.step_count as f64])));
        }
        Self {
            config: config.clone(),
            epoch: trainer.epoch as u64,
            stage: trainer.stage(),
            baseline: trainer.baseline,
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<Real>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = Vec::new();
        head.extend_from_slice(MAGIC);
        head.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.config.to_text();
        head.extend_from_slice(&(text.len() as u32).to_le_bytes());
        head.extend_from_slice(text.as_bytes());
        head.extend_from_slice(&self.epoch.to_le_bytes());
        head.extend_from_slice(&(self.stage.number() as u32).to_le_bytes());
        head.extend_from_slice(&self.baseline.unwrap_or(f64::NAN).to_le_bytes());
        head.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            head.extend_from_slice(&(name.len() as u32).to_le_bytes());
            head.extend_from_slice(name.as_bytes());
            head.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                head.extend_from_slice(&(d as u32).to_le_bytes());
            }
            head.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * t.len() as u64;
        }
        let head_crc = crc32fast::hash(&head);
        head.extend_from_slice(&head_crc.to_le_bytes());
        let mut data = Vec::with_capacity(offset as usize);
        for (_, t) in &self.tensors {
            for v in t.data() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        let data_crc = crc32fast::hash(&data);
        head.extend_from_slice(&data);
        head.extend_from_slice(&data_crc.to_le_bytes());
        head
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let text_len = r.u32()? as usize;
        let text = r.take(text_len)?;
        let epoch = r.u64()?;
        let stage_raw = r.u32()?;
        let baseline = r.f64()?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = r.take(name_len)?.to_vec();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let offset = r.u64()?;
            manifest.push((name, shape, offset));
        }
        let head_end = r.at;
        let head_crc = r.u32()?;
        if crc32fast::hash(&bytes[..head_end]) != head_crc {
            return Err(CheckpointError::Integrity { section: "header" });
        }
        let text = std::str::from_utf8(text).map_err(|e| CheckpointError::Malformed(format!("config text: {e}")))?;
        let config = RunConfig::parse(text)?;
        let stage = Stage::from_number(stage_raw as usize)
            .ok_or_else(|| CheckpointError::Malformed(format!("stage {stage_raw}")))?;
        let data_len: usize = manifest.iter().map(|(_, s, _)| 8 * s.iter().product::<usize>()).sum();
        let data_start = r.at;
        let data = r.take(data_len)?;
        let data_crc = r.u32()?;
        if crc32fast::hash(data) != data_crc {
            return Err(CheckpointError::Integrity { section: "data" });
        }
        if r.at != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        let mut tensors = Vec::with_capacity(manifest.len());
        let mut expected_offset = 0u64;
        for (name, shape, offset) in manifest {
            let name = String::from_utf8(name).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            if offset != expected_offset {
                return Err(CheckpointError::Malformed(format!("`{name}` at offset {offset}, expected {expected_offset}")));
            }
            let n: usize = shape.iter().product();
            let start = data_start + offset as usize;
            let values = bytes[start..start + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            expected_offset += 8 * n as u64;
            let t = Tensor::new(shape, values).map_err(|e| CheckpointError::Malformed(format!("`{name}`: {e}")))?;
            tensors.push((name, t));
        }
        Ok(Self {
            config,
            epoch,
            stage,
            baseline: (!baseline.is_nan()).then_some(baseline),
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Builds the parameters for `config` and fills them from the
    /// checkpoint, checking every shape.
    pub fn restore_bundle(&self, config: &RunConfig) -> Result<ThetaBundle<Real>, CheckpointError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bundle = ThetaBundle::new(config.model_dims(), config.world.max_degree, config.aggregation, &mut rng)?;
        let ids: Vec<_> = bundle.store.ids().collect();
        for id in ids {
            let p = bundle.store.get_mut(id);
            let key = format!("param/{}", p.name);
            let t = self.tensor(&key).ok_or_else(|| CheckpointError::Missing(key.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(CheckpointError::Shape {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            p.value = t.clone();
        }
        let known = bundle.store.len();
        let stored = self.tensors.iter().filter(|(n, _)| n.starts_with("param/")).count();
        if stored != known {
            return Err(CheckpointError::Malformed(format!("{stored} parameters stored, {known} configured")));
        }
        Ok(bundle)
    }

    /// Resumable trainer at the stored stage, epoch and optimizer state.
    pub fn restore_trainer(&self, config: &RunConfig) -> Result<Trainer<Real>, CheckpointError> {
        let bundle = self.restore_bundle(config)?;
        let mut trainer = Trainer::new(bundle, config.world.clone(), config.train.clone())?;
        trainer.enter_stage(self.stage);
        trainer.epoch = self.epoch as usize;
        trainer.baseline = self.baseline;
        let names: Vec<String> = {
            let opt: &Adam<Real> = trainer.optimizer();
            opt.ids().iter().map(|&id| trainer.bundle.store.get(id).name.clone()).collect()
        };
        for (name, state) in names.iter().zip(trainer.optimizer_mut().states_mut()) {
            restore_adam(self, name, state)?;
        }
        Ok(trainer)
    }
}

fn restore_adam(ck: &Checkpoint, name: &str, state: &mut AdamState<Real>) -> Result<(), CheckpointError> {
    let get = |suffix: &str| {
        let key = format!("adam/{name}/{suffix}");
        ck.tensor(&key).ok_or(CheckpointError::Missing(key))
    };
    for (suffix, slot) in [("m", &mut state.first_moment), ("v", &mut state.second_moment)] {
        let t = get(suffix)?;
        if t.shape() != slot.shape() {
            return Err(CheckpointError::Shape {
                name: format!("adam/{name}/{suffix}"),
                expected: slot.shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
        *slot = t.clone();
    }
    state.step_count = get("t")?.data()[0] as u64;
    Ok(())
}
