//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "PANT"  u32 version = 1  u32 parameter_count
//! repeated parameter_count times:
//!     u16 name_len  name (UTF-8)  u8 rank  u32 dims[rank]  f32 data[product(dims)]
//! u32 config_len  config (UTF-8 canonical `key = value` text)
//! ```
//!
//! Parameters are written in registration order, batch-norm running
//! statistics included.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::panet::config::ModelConfig;
use crate::panet::model::PaNet;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"PANT";
pub const VERSION: u32 = 1;

pub fn to_bytes<T: Scalar>(model: &PaNet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (_, p) in model.params.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    let cfg = model.config().canonical_text();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.buf.len()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

struct RawParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn parse(buf: &[u8]) -> std::result::Result<(Vec<RawParam>, String), CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Utf8("parameter name"))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated(buf.len()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(RawParam { name, shape, data });
    }
    let len = r.u32()? as usize;
    let cfg = std::str::from_utf8(r.take(len)?)
        .map_err(|_| CheckpointError::Utf8("config"))?
        .to_string();
    if r.pos != buf.len() {
        return Err(CheckpointError::Trailing(buf.len() - r.pos));
    }
    Ok((params, cfg))
}

/// Decodes a checkpoint, rebuilding the network from its config echo. When
/// `expected` is given the echoed config must match it exactly.
pub fn from_bytes<T: Scalar>(buf: &[u8], expected: Option<&ModelConfig>) -> Result<PaNet<T>> {
    let (raw, cfg_text) = parse(buf)?;
    let config = ModelConfig::from_canonical_text(&cfg_text)?;
    if let Some(exp) = expected {
        if *exp != config {
            return Err(CheckpointError::ConfigMismatch {
                expected: exp.canonical_text(),
                found: cfg_text,
            }
            .into());
        }
    }
    let mut model = PaNet::<T>::build(&config, 0)?;
    let mut by_name: HashMap<&str, &RawParam> = HashMap::with_capacity(raw.len());
    for p in &raw {
        if by_name.insert(&p.name, p).is_some() {
            return Err(Error::DuplicateParameter(p.name.clone()));
        }
    }
    for p in model.params.iter_mut() {
        let src = by_name
            .remove(p.name.as_str())
            .ok_or_else(|| CheckpointError::Missing(p.name.clone()))?;
        if src.shape != p.value.shape() {
            return Err(CheckpointError::Shape {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                found: src.shape.clone(),
            }
            .into());
        }
        p.value = Tensor::new(
            &src.shape,
            src.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
        )?;
    }
    if let Some(extra) = raw.iter().find(|p| by_name.contains_key(p.name.as_str())) {
        return Err(CheckpointError::Unexpected(extra.name.clone()).into());
    }
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &PaNet<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<PaNet<T>> {
    from_bytes(&std::fs::read(path)?, None)
}

pub fn load_checkpoint_expecting<T: Scalar>(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<PaNet<T>> {
    from_bytes(&std::fs::read(path)?, Some(expected))
}
