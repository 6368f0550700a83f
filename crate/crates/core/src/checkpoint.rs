//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "TKGCKPT\0"
//! version    u32
//! dtype      u8       4 (f32) or 8 (f64)
//! header_len u64
//! header     JSON     configs, epoch, metric history, section table
//! payload    raw LE scalars, one section after another
//! digest     32 bytes sha256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{AdamConfig, AdamState, Array, Scalar};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::ParamStore;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"TKGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

const PREFIX_LEN: usize = 8 + 4 + 1 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub val_mrr_history: Vec<f64>,
    pub params: ParamStore<T>,
    pub optimizer: AdamState<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    val_mrr_history: Vec<f64>,
    optimizer: AdamConfig,
    optimizer_step: u64,
    parameters: Vec<Section>,
    moments: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Section {
    name: String,
    shape: Vec<usize>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let moments = !self.optimizer.first_moments().is_empty();
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            val_mrr_history: self.val_mrr_history.clone(),
            optimizer: self.optimizer.config,
            optimizer_step: self.optimizer.step_count(),
            parameters: self
                .params
                .iter()
                .map(|(name, v)| Section {
                    name: name.to_string(),
                    shape: v.shape().to_vec(),
                })
                .collect(),
            moments,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREFIX_LEN + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(T::WIDTH as u8);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut write = |a: &Array<T>| a.data().iter().for_each(|&v| v.write_le(&mut out));
        self.params.values().iter().for_each(&mut write);
        if moments {
            self.optimizer.first_moments().iter().for_each(&mut write);
            self.optimizer.second_moments().iter().for_each(&mut write);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (dtype, header, payload) = split(bytes)?;
        if dtype != T::WIDTH {
            return Err(corrupt(format!(
                "checkpoint stores {}-byte scalars, expected {}",
                dtype,
                T::NAME
            )));
        }
        let header: Header =
            serde_json::from_slice(header).map_err(|e| corrupt(format!("bad header: {e}")))?;

        let mut sizes = Vec::with_capacity(header.parameters.len());
        for s in &header.parameters {
            let n = s
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n > 0)
                .ok_or_else(|| corrupt(format!("bad shape {:?} for {}", s.shape, s.name)))?;
            sizes.push(n);
        }
        let copies = if header.moments { 3 } else { 1 };
        let expected = sizes
            .iter()
            .try_fold(0usize, |acc, &n| acc.checked_add(n))
            .and_then(|n| n.checked_mul(copies))
            .and_then(|n| n.checked_mul(T::WIDTH))
            .ok_or_else(|| corrupt("payload size overflows"))?;
        if expected != payload.len() {
            return Err(corrupt(format!(
                "payload has {} bytes, header describes {expected}",
                payload.len()
            )));
        }

        let mut cursor = payload.chunks_exact(T::WIDTH).map(T::read_le);
        let mut read_all = || -> Result<Vec<Array<T>>> {
            header
                .parameters
                .iter()
                .zip(&sizes)
                .map(|(s, &n)| Array::new(s.shape.clone(), cursor.by_ref().take(n).collect()))
                .collect()
        };
        let values = read_all()?;
        let (first, second) = if header.moments {
            (read_all()?, read_all()?)
        } else {
            (Vec::new(), Vec::new())
        };

        let mut params = ParamStore::new();
        for (s, v) in header.parameters.iter().zip(values) {
            if params.by_name(&s.name).is_some() {
                return Err(corrupt(format!("duplicate parameter {}", s.name)));
            }
            params.add(&s.name, v);
        }
        let optimizer =
            AdamState::from_parts(header.optimizer, header.optimizer_step, first, second)?;
        Ok(Self {
            model: header.model,
            train: header.train,
            epoch: header.epoch,
            val_mrr_history: header.val_mrr_history,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Checks framing and digest; returns the dtype width, header and payload.
fn split(bytes: &[u8]) -> Result<(usize, &[u8], &[u8])> {
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(corrupt(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "unsupported format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("digest mismatch (truncated or corrupted file)"));
    }
    let dtype = bytes[12] as usize;
    if dtype != 4 && dtype != 8 {
        return Err(corrupt(format!("unknown scalar width {dtype}")));
    }
    let header_len = u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes"));
    let rest = &body[PREFIX_LEN..];
    if header_len > rest.len() as u64 {
        return Err(corrupt("header length exceeds file size"));
    }
    let (header, payload) = rest.split_at(header_len as usize);
    Ok((dtype, header, payload))
}

/// A checkpoint of either precision.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        match split(bytes)?.0 {
            4 => Checkpoint::decode(bytes).map(Self::F32),
            _ => Checkpoint::decode(bytes).map(Self::F64),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn model_config(&self) -> &ModelConfig {
        match self {
            Self::F32(c) => &c.model,
            Self::F64(c) => &c.model,
        }
    }

    pub fn train_config(&self) -> &TrainConfig {
        match self {
            Self::F32(c) => &c.train,
            Self::F64(c) => &c.train,
        }
    }

    pub fn epoch(&self) -> usize {
        match self {
            Self::F32(c) => c.epoch,
            Self::F64(c) => c.epoch,
        }
    }
}
