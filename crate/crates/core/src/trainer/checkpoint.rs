//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "DPCK"  u32 version = 1  u32 tensor_count
//! per tensor: u16 name_len, name (UTF-8), u8 rank, rank x u64 dims, f32 values
//! u64 iteration  u64 seed
//! ```
//!
//! Momentum buffers are stored as tensors named `<param>#momentum`. The
//! training configuration goes to a JSON sidecar next to the file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::TrainConfig;
use crate::model::{Model, ModelError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DPCK";
pub const VERSION: u32 = 1;
const MOMENTUM_SUFFIX: &str = "#momentum";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unknown checkpoint version {0}")]
    UnknownVersion(u32),
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("tensor name is not UTF-8")]
    BadName,
    #[error("{0} trailing bytes after the checkpoint")]
    TrailingBytes(usize),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
    #[error("config sidecar: {0}")]
    Config(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub iteration: u64,
    pub seed: u64,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, iteration: u64, seed: u64, config: Option<TrainConfig>) -> Self {
        let mut tensors = Vec::new();
        for p in model.params.iter() {
            tensors.push((p.name.clone(), p.value.clone()));
        }
        for p in model.params.iter() {
            tensors.push((format!("{}{MOMENTUM_SUFFIX}", p.name), p.momentum.clone()));
        }
        Self {
            version: VERSION,
            iteration,
            seed,
            tensors,
            config,
        }
    }

    /// Copies weights and momentum into `model`, which must have exactly the
    /// same parameter names and shapes. Missing momentum entries stay zero.
    pub fn restore_into(&self, model: &mut Model) -> Result<(), CheckpointError> {
        let mut seen = HashSet::new();
        for (name, t) in &self.tensors {
            let (base, momentum) = match name.strip_suffix(MOMENTUM_SUFFIX) {
                Some(b) => (b, true),
                None => (name.as_str(), false),
            };
            let id = model
                .params
                .id(base)
                .ok_or_else(|| CheckpointError::Mismatch(format!("unknown tensor {name:?}")))?;
            let p = model.params.get_mut(id);
            if p.value.shape() != t.shape() {
                return Err(CheckpointError::Mismatch(format!(
                    "{name:?} has shape {:?}, the model expects {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            if momentum {
                p.momentum = t.clone();
            } else {
                p.value = t.clone();
                seen.insert(base.to_string());
            }
        }
        if let Some(p) = model.params.iter().find(|p| !seen.contains(&p.name)) {
            return Err(CheckpointError::Mismatch(format!("no weights for {:?}", p.name)));
        }
        model.params.zero_grads();
        Ok(())
    }

    /// Builds the model described by the embedded config and restores it.
    pub fn to_model(&self) -> Result<Model, CheckpointError> {
        let cfg = self
            .config
            .as_ref()
            .ok_or_else(|| CheckpointError::Mismatch("no config snapshot".into()))?;
        let mut model = Model::build(&cfg.model, 0)?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnknownVersion(version));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        let mut names = HashSet::new();
        for i in 0..count {
            let len = r.u16(&format!("name length of tensor #{i}"))? as usize;
            let name = std::str::from_utf8(r.take(len, &format!("name of tensor #{i}"))?)
                .map_err(|_| CheckpointError::BadName)?
                .to_string();
            if !names.insert(name.clone()) {
                return Err(CheckpointError::DuplicateName(name));
            }
            let rank = r.take(1, &format!("rank of tensor {name:?}"))?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64(&format!("shape of tensor {name:?}"))? as usize);
            }
            let n: usize = shape.iter().product();
            let data = r
                .take(4 * n, &format!("values of tensor {name:?}"))?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
            tensors.push((name, t));
        }
        let iteration = r.u64("iteration")?;
        let seed = r.u64("seed")?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self {
            version,
            iteration,
            seed,
            tensors,
            config: None,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Path of the JSON config stored next to a checkpoint.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.encode())?;
    if let Some(cfg) = &ckpt.config {
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(cfg)?)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let mut ckpt = Checkpoint::decode(&std::fs::read(path)?)?;
    let side = sidecar_path(path);
    if side.exists() {
        ckpt.config = Some(serde_json::from_str(&std::fs::read_to_string(side)?)?);
    }
    Ok(ckpt)
}
