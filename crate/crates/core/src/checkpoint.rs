//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"ERCK"  version:u8
//! config_len:u32  config:TOML text of the ModelConfig
//! count:u32  count x { name_len:u16  name:utf8  tensor:ERTF fixture }
//! has_state:u8
//!   iter:u64 lr:f64 patch:u32
//!   adam_step:u64 beta1:f64 beta2:f64 eps:f64
//!   rng_seed:[u8; 32] rng_stream:u64 rng_word_pos:u128
//!   count x first moment (ERTF), count x second moment (ERTF)
//! ```
//!
//! Only unique parameters are stored; aliases of shared blocks are rebuilt from the config.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Model, ModelConfig};
use crate::error::{io_err, Error, Result};
use crate::tensor::fixture::{decode_prefix, encode_fixture};
use crate::train::{Adam, TrainState};

const MAGIC: &[u8; 4] = b"ERCK";
const VERSION: u8 = 1;

pub fn encode(model: &Model, state: Option<&TrainState>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let cfg = toml::to_string(model.config()).map_err(|e| Error::Format(format!("config: {e}")))?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let entries = model.store.entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&encode_fixture(&e.tensor));
    }
    match state {
        None => out.push(0),
        Some(s) => {
            if s.adam.m.len() != entries.len() {
                return Err(Error::Invalid("optimiser state does not match the parameter store".into()));
            }
            out.push(1);
            out.extend_from_slice(&(s.iter as u64).to_le_bytes());
            out.extend_from_slice(&s.lr.to_le_bytes());
            out.extend_from_slice(&(s.patch as u32).to_le_bytes());
            out.extend_from_slice(&s.adam.step.to_le_bytes());
            for f in [s.adam.beta1, s.adam.beta2, s.adam.eps] {
                out.extend_from_slice(&f.to_le_bytes());
            }
            out.extend_from_slice(&s.rng.get_seed());
            out.extend_from_slice(&s.rng.get_stream().to_le_bytes());
            out.extend_from_slice(&s.rng.get_word_pos().to_le_bytes());
            for t in s.adam.m.iter().chain(&s.adam.v) {
                out.extend_from_slice(&encode_fixture(t));
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn tensor(&mut self) -> Result<crate::tensor::Tensor> {
        let (t, used) = decode_prefix(&self.bytes[self.pos..])?;
        self.pos += used;
        Ok(t)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Model, Option<TrainState>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(r.array()?) as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("config is not UTF-8".into()))?;
    let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let n = u16::from_le_bytes(r.array()?) as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))?;
        records.push((name, r.tensor()?));
    }
    let dtype = records
        .first()
        .map(|(_, t)| t.dtype())
        .ok_or_else(|| Error::Format("checkpoint holds no parameters".into()))?;
    let mut model = Model::zeroed(&cfg, dtype)?;
    if model.store.len() != count {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, config expects {}",
            model.store.len()
        )));
    }
    for (name, t) in records {
        model.store.set_by_name(&name, t)?;
    }
    let state = match r.u8()? {
        0 => None,
        1 => {
            let iter = u64::from_le_bytes(r.array()?) as usize;
            let lr = f64::from_le_bytes(r.array()?);
            let patch = u32::from_le_bytes(r.array()?) as usize;
            let step = u64::from_le_bytes(r.array()?);
            let beta1 = f64::from_le_bytes(r.array()?);
            let beta2 = f64::from_le_bytes(r.array()?);
            let eps = f64::from_le_bytes(r.array()?);
            let mut rng = ChaCha8Rng::from_seed(r.array()?);
            rng.set_stream(u64::from_le_bytes(r.array()?));
            rng.set_word_pos(u128::from_le_bytes(r.array()?));
            let mut moments = Vec::with_capacity(2 * count);
            for i in 0..2 * count {
                let t = r.tensor()?;
                let p = &model.store.entries()[i % count].tensor;
                if t.shape() != p.shape() || t.dtype() != p.dtype() {
                    return Err(Error::Format(format!("moment {i} does not match its parameter")));
                }
                moments.push(t);
            }
            let v = moments.split_off(count);
            let adam = Adam { beta1, beta2, eps, step, m: moments, v };
            Some(TrainState { iter, lr, patch, adam, rng })
        }
        f => return Err(Error::Format(format!("bad state flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    Ok((model, state))
}

pub fn save(path: impl AsRef<Path>, model: &Model, state: Option<&TrainState>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model, state)?).map_err(io_err(path))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Model, Option<TrainState>)> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(io_err(path))?)
}
