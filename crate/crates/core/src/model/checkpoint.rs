//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GBCK"  u32 version
//! u32 len, config as TOML (UTF-8)
//! u64 completed epochs, u64 master seed, u64 optimizer step
//! u32 tensor count, then per tensor:
//!     u32 len, name (UTF-8), u64 rows, u64 cols, rows*cols f64 row-major
//! ```
//!
//! Every random stream used during training is derived from the master seed
//! and the epoch/batch/view coordinates, so the seed plus the epoch counter
//! is the complete RNG state.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::diffcore::Adam;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

use super::config::TrainConfig;
use super::network::{Layer, ViewNetwork};
use super::trainer::Trainer;

pub const MAGIC: &[u8; 4] = b"GBCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: u64,
    pub seed: u64,
    pub adam_step: u64,
    pub tensors: Vec<(String, DenseMatrix<f64>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.config.to_toml();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        for v in [self.epoch, self.seed, self.adam_step] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, m) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?;
        let config = TrainConfig::from_toml(text).map_err(|e| e.to_string())?;
        let (epoch, seed, adam_step) = (r.u64()?, r.u64()?, r.u64()?);
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?.to_string();
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows.checked_mul(cols).ok_or("tensor size overflows")?;
            let raw = r.take(n.checked_mul(8).ok_or("tensor size overflows")?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let m = DenseMatrix::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
            tensors.push((name, m));
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self {
            config,
            epoch,
            seed,
            adam_step,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|d| Error::format(path, d))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl<T: Scalar> Trainer<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for (v, net) in self.nets.iter().enumerate() {
            for (name, m) in net.parameters() {
                tensors.push((format!("view{v}.{name}"), m.cast()));
            }
        }
        let (first, second) = self.adam.moments();
        for (i, m) in first.iter().enumerate() {
            tensors.push((format!("adam.m.{i}"), m.cast()));
        }
        for (i, m) in second.iter().enumerate() {
            tensors.push((format!("adam.v.{i}"), m.cast()));
        }
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch as u64,
            seed: self.config.seed,
            adam_step: self.adam.step_count(),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut config = ckpt.config.clone();
        config.seed = ckpt.seed;
        config.validate()?;
        let mut map: BTreeMap<&str, &DenseMatrix<f64>> = BTreeMap::new();
        for (name, m) in &ckpt.tensors {
            if map.insert(name, m).is_some() {
                return Err(Error::Contract(format!("checkpoint repeats tensor {name}")));
            }
        }
        let layers = |prefix: &str| -> Result<Vec<Layer<T>>> {
            let mut out = Vec::new();
            while let Some(w) = map.get(format!("{prefix}.{}.weight", out.len()).as_str()) {
                let b = map
                    .get(format!("{prefix}.{}.bias", out.len()).as_str())
                    .ok_or_else(|| Error::Contract(format!("{prefix}.{} has no bias", out.len())))?;
                out.push(Layer {
                    weight: w.cast(),
                    bias: b.cast(),
                });
            }
            Ok(out)
        };
        let mut nets = Vec::new();
        while map.contains_key(format!("view{}.enc.0.weight", nets.len()).as_str()) {
            let v = nets.len();
            nets.push(ViewNetwork::from_layers(
                config.variant,
                layers(&format!("view{v}.enc"))?,
                layers(&format!("view{v}.dec"))?,
            )?);
        }
        if nets.is_empty() {
            return Err(Error::Contract("checkpoint holds no networks".into()));
        }
        let moments = |prefix: &str| -> Vec<DenseMatrix<T>> {
            (0..)
                .map_while(|i| map.get(format!("{prefix}.{i}").as_str()).map(|m| m.cast()))
                .collect()
        };
        let mut adam = Adam::new(config.adam())?;
        adam.restore(ckpt.adam_step, moments("adam.m"), moments("adam.v"))?;
        Ok(Self {
            config,
            nets,
            adam,
            epoch: ckpt.epoch as usize,
        })
    }
}
