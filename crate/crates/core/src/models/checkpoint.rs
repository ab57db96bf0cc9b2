//! Model checkpoints.
//!
//! JSON form:
//!
//! ```json
//! { "family": "nqm", "width": 4, "input_dim": 3, "seed": 7,
//!   "anchor":  { "first_layer": [..m*d, row-major..], "second_layer": [..m..] },
//!   "current": { "first_layer": [..], "second_layer": [..] } }
//! ```
//!
//! Binary form, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `NQMCKPT1` |
//! | 1     | family tag: 0 network, 1 linearized, 2 nqm |
//! | 1     | 1 if a seed follows in the seed field, else 0 |
//! | 8     | width `m` (u64) |
//! | 8     | input dim `d` (u64) |
//! | 8     | seed (u64, zero when absent) |
//! | 8·m·d | anchor first layer, row-major f64 |
//! | 8·m   | anchor second layer f64 |
//! | 8·m·d | current first layer |
//! | 8·m   | current second layer |

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::network::{AnchoredModel, Family, NetworkParams};
use crate::error::{check_dim, Error, Result};

const MAGIC: &[u8; 8] = b"NQMCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerArrays {
    pub first_layer: Vec<f64>,
    pub second_layer: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub family: Family,
    pub width: usize,
    pub input_dim: usize,
    pub seed: Option<u64>,
    pub anchor: LayerArrays,
    pub current: LayerArrays,
}

fn to_arrays(p: &NetworkParams) -> LayerArrays {
    let flat = p.flatten();
    let md = p.width() * p.input_dim();
    LayerArrays {
        first_layer: flat.as_slice()[..md].to_vec(),
        second_layer: flat.as_slice()[md..].to_vec(),
    }
}

fn from_arrays(m: usize, d: usize, a: &LayerArrays) -> Result<NetworkParams> {
    check_dim("checkpoint first layer", m * d, a.first_layer.len())?;
    check_dim("checkpoint second layer", m, a.second_layer.len())?;
    NetworkParams::new(
        DMatrix::from_row_slice(m, d, &a.first_layer),
        DVector::from_column_slice(&a.second_layer),
    )
}

impl Checkpoint {
    pub fn from_model(model: &AnchoredModel) -> Self {
        Self {
            family: model.family(),
            width: model.width(),
            input_dim: model.input_dim(),
            seed: model.seed(),
            anchor: to_arrays(model.anchor()),
            current: to_arrays(model.current()),
        }
    }

    pub fn into_model(self) -> Result<AnchoredModel> {
        let anchor = from_arrays(self.width, self.input_dim, &self.anchor)?;
        let current = from_arrays(self.width, self.input_dim, &self.current)?;
        Ok(AnchoredModel::new(self.family, anchor)
            .with_current(current)?
            .with_seed(self.seed))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(34 + 16 * self.width * (self.input_dim + 1));
        out.extend_from_slice(MAGIC);
        out.push(match self.family {
            Family::Network => 0,
            Family::Linearized => 1,
            Family::Nqm => 2,
        });
        out.push(u8::from(self.seed.is_some()));
        out.extend_from_slice(&(self.width as u64).to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.unwrap_or(0).to_le_bytes());
        for layer in [&self.anchor, &self.current] {
            for v in layer.first_layer.iter().chain(&layer.second_layer) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            line: 0,
            message: format!("binary checkpoint: {msg}"),
        };
        if bytes.len() < 34 || &bytes[..8] != MAGIC {
            return Err(bad("missing header"));
        }
        let family = match bytes[8] {
            0 => Family::Network,
            1 => Family::Linearized,
            2 => Family::Nqm,
            t => return Err(bad(&format!("unknown family tag {t}"))),
        };
        let has_seed = bytes[9] == 1;
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let (m, d, seed) = (word(10) as usize, word(18) as usize, word(26));
        let count = m
            .checked_mul(d + 1)
            .and_then(|c| c.checked_mul(2))
            .ok_or_else(|| bad("size overflow"))?;
        if bytes.len() != 34 + 8 * count {
            return Err(bad(&format!("expected {} payload bytes, found {}", 8 * count, bytes.len() - 34)));
        }
        let floats: Vec<f64> = bytes[34..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let layer = |offset: usize| LayerArrays {
            first_layer: floats[offset..offset + m * d].to_vec(),
            second_layer: floats[offset + m * d..offset + m * (d + 1)].to_vec(),
        };
        Ok(Self {
            family,
            width: m,
            input_dim: d,
            seed: has_seed.then_some(seed),
            anchor: layer(0),
            current: layer(m * (d + 1)),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let data = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => self.to_json().into_bytes(),
            _ => self.to_bytes(),
        };
        std::fs::write(path, data).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&String::from_utf8_lossy(&data)),
            _ => Self::from_bytes(&data),
        }
    }
}
