//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "HCCKPT\0\0" | version u32 | header_len u64 | header (JSON)
//! | tensor_count u64 | tensor records | SHA-256 of everything before it
//! ```
//!
//! A tensor record is `name_len u32 | name | dtype u8 | rank u32 | dims u64* | data`.
//! Model parameters come first in layout order, then optimizer state.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, ParamLayout};
use crate::error::{Error, Result};
use crate::numerics::{DType, Real, Tensor};

const MAGIC: &[u8; 8] = b"HCCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// Exact position of a ChaCha8 generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, as a decimal string since it is 128-bit.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self.word_pos.parse().map_err(|_| Error::Checkpoint("bad rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    /// Free-form echo of the run configuration that produced this checkpoint.
    pub run_config: serde_json::Value,
    /// Named optimizer state tensors.
    pub optimizer: Vec<(String, Tensor<T>)>,
    pub step: u64,
    pub rng: Option<RngState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    run_config: serde_json::Value,
    step: u64,
    rng: Option<RngState>,
    param_count: u64,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(model: Model<T>) -> Self {
        Self { model, run_config: serde_json::Value::Null, optimizer: Vec::new(), step: 0, rng: None }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.config().clone(),
            run_config: self.run_config.clone(),
            step: self.step,
            rng: self.rng.clone(),
            param_count: self.model.params().len() as u64,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let specs = self.model.layout().specs();
        let records: Vec<(&str, &Tensor<T>)> = specs
            .iter()
            .map(|s| s.name.as_str())
            .zip(self.model.params())
            .chain(self.optimizer.iter().map(|(n, t)| (n.as_str(), t)))
            .collect();
        out.extend_from_slice(&(records.len() as u64).to_le_bytes());
        for (name, t) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.code());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &dim in t.shape() {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let hlen = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)?;
        let count = r.u64()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let dtype = DType::from_code(r.take(1)?[0]).ok_or_else(|| corrupt("unknown dtype"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(dtype.size()).ok_or_else(|| corrupt("tensor too large"))?)?;
            let data = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| T::c(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| T::c(f64::read_le(c))).collect(),
            };
            records.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        let pc = header.param_count as usize;
        if records.len() < pc {
            return Err(corrupt("fewer tensors than parameters"));
        }
        let optimizer = records.split_off(pc);
        let layout = ParamLayout::new(&header.model)?;
        for ((name, _), spec) in records.iter().zip(layout.specs()) {
            if *name != spec.name {
                return Err(Error::Checkpoint(format!("expected tensor {}, found {name}", spec.name)));
            }
        }
        if records.len() != layout.len() {
            return Err(corrupt("parameter count disagrees with the model config"));
        }
        let model = Model::from_params(&header.model, records.into_iter().map(|(_, t)| t).collect())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self { model, run_config: header.run_config, optimizer, step: header.step, rng: header.rng })
    }

    /// Error unless the stored model config equals `expected`.
    pub fn expect_config(&self, expected: &ModelConfig) -> Result<()> {
        let got = self.model.config();
        if got != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds {}, expected {}",
                serde_json::to_string(got)?,
                serde_json::to_string(expected)?
            )));
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint<T: Real>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
