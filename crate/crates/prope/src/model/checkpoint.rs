//! Checkpoint container.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic   "MVCK" (4 bytes)
//! version u32
//! step    u64
//! rng     seed [u8; 32], stream u64, word position u128
//! config  u32 length + JSON bytes (ModelConfig echo)
//! count   u32 number of parameter tensors, then per tensor:
//!   name  u32 length + UTF-8 bytes
//!   ndim  u32, dims u32 each
//!   data  f64 LE, product(dims) values
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::rng::RngState;
use crate::tensor::{Rng, Tensor};

const MAGIC: &[u8; 4] = b"MVCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub rng: RngState,
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub fn save_checkpoint(path: &Path, model: &Model, rng: &Rng, step: u64) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&step.to_le_bytes());
    let (seed, stream, word_pos) = rng.state();
    buf.extend_from_slice(&seed);
    buf.extend_from_slice(&stream.to_le_bytes());
    buf.extend_from_slice(&word_pos.to_le_bytes());
    let config_json = serde_json::to_vec(&model.config)?;
    buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config_json);
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a MVCK checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let step = r.u64()?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid parameter name".into()))?;
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push((name, dims, data));
    }
    Ok(Checkpoint {
        config,
        step,
        rng: (seed, stream, word_pos),
        params,
    })
}

/// Rebuild a model from a checkpoint, filling parameters by name.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
    let mut model = Model::init(&ckpt.config, &mut Rng::new(0))?;
    let mut stored: std::collections::BTreeMap<&str, (&Vec<usize>, &Vec<f64>)> = ckpt
        .params
        .iter()
        .map(|(n, s, d)| (n.as_str(), (s, d)))
        .collect();
    for (name, t) in model.params_mut() {
        let (shape, data) = stored
            .remove(name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if shape.as_slice() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {shape:?}, model expects {:?}",
                t.shape()
            )));
        }
        *t = Tensor::param(shape, data.clone())?;
    }
    if let Some((name, _)) = stored.into_iter().next() {
        return Err(Error::Checkpoint(format!("unknown parameter {name} in checkpoint")));
    }
    Ok(model)
}
