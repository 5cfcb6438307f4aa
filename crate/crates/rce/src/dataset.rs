//! `RCED` dataset files.
//!
//! The payload stores every triple as little-endian `f32` values laid out
//! `[x_t | u_t | x_next | s_t | s_next]`. Values are rounded to `f32` once
//! when the dataset is built, so a written file reads back bit for bit.

use std::path::Path;

use rce_core::env::{self, EnvConfig, ObservationTriple, PlanarState};
use serde::{Deserialize, Serialize};

use crate::container::{self, FormatError};

const MAGIC: &[u8; 4] = b"RCED";
const VERSION: u32 = 1;
const N_S: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env: String,
    pub n_x: usize,
    pub n_u: usize,
    pub n_s: usize,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub env_config: EnvConfig,
}

impl DatasetHeader {
    fn record_len(&self) -> usize {
        2 * self.n_x + self.n_u + 2 * self.n_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub triples: Vec<ObservationTriple>,
}

fn round(v: f64) -> f64 {
    v as f32 as f64
}

fn round_triple(t: ObservationTriple) -> ObservationTriple {
    let r = |s: PlanarState| PlanarState::new(round(s.position[0]), round(s.position[1]));
    ObservationTriple {
        x_t: t.x_t.into_iter().map(round).collect(),
        u_t: t.u_t.into_iter().map(round).collect(),
        x_next: t.x_next.into_iter().map(round).collect(),
        s_t: r(t.s_t),
        s_next: r(t.s_next),
    }
}

impl Dataset {
    /// Generates `n` planar triples and rounds them to storage precision.
    pub fn generate_planar(sigma: f64, n: usize, seed: u64) -> Result<Self, env::EnvError> {
        let cfg = EnvConfig::planar(sigma);
        let triples = env::generate_dataset(&cfg, n, seed)?.into_iter().map(round_triple).collect();
        Ok(Self {
            header: DatasetHeader {
                env: String::from("planar"),
                n_x: cfg.n_x(),
                n_u: 2,
                n_s: N_S,
                n,
                sigma,
                seed,
                env_config: cfg,
            },
            triples,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.triples.len() * self.header.record_len() * 4);
        let mut put = |v: f64| payload.extend_from_slice(&(v as f32).to_le_bytes());
        for t in &self.triples {
            t.x_t.iter().chain(&t.u_t).chain(&t.x_next).for_each(|&v| put(v));
            t.s_t.position.iter().chain(&t.s_next.position).for_each(|&v| put(v));
        }
        container::encode(MAGIC, VERSION, &self.header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let (header, payload): (DatasetHeader, _) = container::decode(bytes, MAGIC, VERSION, "dataset")?;
        if header.n_s != N_S {
            return Err(FormatError::Inconsistent(format!("state dimension {} is not 2", header.n_s)));
        }
        let record = header.record_len();
        if payload.len() != header.n * record * 4 {
            return Err(FormatError::Inconsistent(format!(
                "{} triples of {record} values need {} payload bytes, found {}",
                header.n,
                header.n * record * 4,
                payload.len()
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let (nx, nu) = (header.n_x, header.n_u);
        let triples = values
            .chunks_exact(record)
            .map(|r| {
                let s = &r[2 * nx + nu..];
                ObservationTriple {
                    x_t: r[..nx].to_vec(),
                    u_t: r[nx..nx + nu].to_vec(),
                    x_next: r[nx + nu..2 * nx + nu].to_vec(),
                    s_t: PlanarState::new(s[0], s[1]),
                    s_next: PlanarState::new(s[2], s[3]),
                }
            })
            .collect();
        Ok(Self { header, triples })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
