//! `RCEC` checkpoint files: the header names every parameter block and its
//! shape, the payload holds the blocks as little-endian `f64` in canonical
//! order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rce_core::training::TrainConfig;
use rce_core::{Architecture, ModelDims, RceParams, Tensor};
use serde::{Deserialize, Serialize};

use crate::container::{self, FormatError};

const MAGIC: &[u8; 4] = b"RCEC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dims: ModelDims,
    pub arch: Architecture,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: RceParams,
    pub train_config: TrainConfig,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.params.named_params();
        let blocks = named
            .iter()
            .map(|(name, t)| BlockInfo {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let header = CheckpointHeader {
            dims: self.params.dims(),
            arch: self.params.arch.clone(),
            train_config: self.train_config.clone(),
            epoch: self.epoch,
            blocks,
        };
        let mut payload = Vec::with_capacity(self.params.param_count() * 8);
        for (_, t) in &named {
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        container::encode(MAGIC, VERSION, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let (header, payload): (CheckpointHeader, _) = container::decode(bytes, MAGIC, VERSION, "checkpoint")?;
        if header.arch.dims != header.dims {
            return Err(FormatError::Inconsistent(String::from(
                "architecture dimensions differ from declared dimensions",
            )));
        }
        // The initial values are overwritten; only the structure matters.
        let mut params = RceParams::init(header.arch.clone(), &mut ChaCha8Rng::seed_from_u64(0));
        let expected: Vec<BlockInfo> = params
            .named_params()
            .into_iter()
            .map(|(name, t)| BlockInfo {
                name,
                shape: t.shape().to_vec(),
            })
            .collect();
        if expected != header.blocks {
            return Err(FormatError::Inconsistent(String::from(
                "parameter blocks do not match the architecture",
            )));
        }
        let total: usize = expected.iter().map(|b| b.shape.iter().product::<usize>()).sum();
        if payload.len() != total * 8 {
            return Err(FormatError::Inconsistent(format!(
                "{total} parameters need {} payload bytes, found {}",
                total * 8,
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let tensors = expected
            .iter()
            .map(|b| {
                let n = b.shape.iter().product();
                Tensor::new(&b.shape, values.by_ref().take(n).collect())
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FormatError::Inconsistent(e.to_string()))?;
        params
            .load_params(tensors)
            .map_err(|e| FormatError::Inconsistent(e.to_string()))?;
        Ok(Self {
            params,
            train_config: header.train_config,
            epoch: header.epoch,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
