//! Binary checkpoint: `SRDVCKPT`, u32 version, u64 header length, JSON
//! header, u64 value count, little-endian f64 payload, u64 FNV-1a checksum of
//! the payload bytes.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SrdModel};
use crate::nn::ParamStore;
use crate::resample::ResampleConfig;

const MAGIC: &[u8; 8] = b"SRDVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:08}.ckpt"))
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    step: u64,
    model: ModelConfig,
    train: TrainConfig,
    resample: ResampleConfig,
    /// Model store, then the three q-net stores.
    stores: Vec<Vec<TensorMeta>>,
    vc_opt_step: u64,
    q_opt_step: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn meta(store: &ParamStore) -> Vec<TensorMeta> {
    store
        .iter()
        .map(|(_, p)| TensorMeta {
            name: p.name.clone(),
            rows: p.value.nrows(),
            cols: p.value.ncols(),
        })
        .collect()
}

fn push_all<'a>(out: &mut Vec<f64>, mats: impl IntoIterator<Item = &'a Array2<f64>>) {
    for m in mats {
        out.extend(m.iter());
    }
}

struct Reader<'a> {
    values: &'a [f64],
    pos: usize,
}

impl Reader<'_> {
    fn fill(&mut self, m: &mut Array2<f64>) -> std::result::Result<(), String> {
        let n = m.len();
        let src = self.values.get(self.pos..self.pos + n).ok_or("payload too short")?;
        m.iter_mut().zip(src).for_each(|(d, s)| *d = *s);
        self.pos += n;
        Ok(())
    }
}

impl TrainState {
    fn stores(&self) -> [&ParamStore; 4] {
        let [a, b, c] = self.qnets.stores();
        [&self.model.store, a, b, c]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            step: self.step,
            model: self.model.config.clone(),
            train: self.train.clone(),
            resample: self.resample,
            stores: self.stores().iter().map(|s| meta(s)).collect(),
            vc_opt_step: self.vc_opt.step,
            q_opt_step: self.q_opt.step,
        };
        let mut values = Vec::new();
        for s in self.stores() {
            push_all(&mut values, s.iter().map(|(_, p)| &p.value));
        }
        for opt in [&self.vc_opt, &self.q_opt] {
            for (m, v) in &opt.moments {
                push_all(&mut values, m);
                push_all(&mut values, v);
            }
        }
        let header = serde_json::to_vec(&header)?;
        let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut out = Vec::with_capacity(payload.len() + header.len() + 40);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&fnv1a(&payload).to_le_bytes());
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, out)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("cannot read checkpoint: {e}"),
        })?;
        Self::decode(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let take = |from: usize, n: usize| bytes.get(from..from + n).ok_or_else(|| "truncated checkpoint".to_string());
        if take(0, 8)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = u32::from_le_bytes(take(8, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"));
        }
        let hlen = u64::from_le_bytes(take(12, 8)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(take(20, hlen)?).map_err(|e| format!("bad checkpoint header: {e}"))?;
        let mut pos = 20 + hlen;
        let count = u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()) as usize;
        pos += 8;
        let payload = take(pos, count.checked_mul(8).ok_or("bad value count")?)?;
        pos += payload.len();
        let checksum = u64::from_le_bytes(take(pos, 8)?.try_into().unwrap());
        if pos + 8 != bytes.len() {
            return Err("trailing bytes after checkpoint".into());
        }
        if checksum != fnv1a(payload) {
            return Err("checkpoint checksum mismatch (corrupted payload)".into());
        }
        let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

        let mut state = TrainState::new(header.model.clone(), header.train.clone(), header.resample)
            .map_err(|e| format!("invalid configuration in checkpoint: {e}"))?;
        let expected: Vec<Vec<TensorMeta>> = state.stores().iter().map(|s| meta(s)).collect();
        let same = expected.len() == header.stores.len()
            && expected.iter().zip(&header.stores).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.name == y.name && x.rows == y.rows && x.cols == y.cols)
            });
        if !same {
            return Err("parameter layout does not match the stored configuration".into());
        }
        let mut r = Reader { values: &values, pos: 0 };
        {
            let [b, c, d] = state.qnets.stores_mut();
            for store in [&mut state.model.store, b, c, d] {
                let ids: Vec<_> = store.ids().collect();
                for id in ids {
                    r.fill(store.get_mut(id))?;
                }
            }
        }
        for opt in [&mut state.vc_opt, &mut state.q_opt] {
            for (m, v) in opt.moments.iter_mut() {
                for mat in m.iter_mut().chain(v.iter_mut()) {
                    r.fill(mat)?;
                }
            }
        }
        if r.pos != values.len() {
            return Err("payload length does not match the parameter layout".into());
        }
        state.vc_opt.step = header.vc_opt_step;
        state.q_opt.step = header.q_opt_step;
        state.step = header.step;
        Ok(state)
    }

    /// Only the inference network, for conversion and evaluation.
    pub fn load_model(path: &Path) -> Result<(SrdModel, u64)> {
        let s = Self::load(path)?;
        Ok((s.model, s.step))
    }
}
