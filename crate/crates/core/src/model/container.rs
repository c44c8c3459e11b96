//! Binary weight container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic  "MTRW"
//! version            (currently 1)
//! meta_len, meta     UTF-8 JSON, carries the architecture config
//! count              number of arrays
//! per array:
//!   name_len, name   e.g. "backbone/layer0.conv.weight"
//!   ndim, dims[ndim]
//!   data             prod(dims) little-endian f32
//! ```
//!
//! Array names are prefixed with their partition (`backbone/`, `tool_head/`,
//! `phase_head/`, `mapping_cell/`); checkpoints add `optimizer/` arrays.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::Value;

use super::params::{init_parameters, ModelParams, Tensor};
use super::ArchConfig;
use crate::error::{Error, IoContext, Result};

pub const WEIGHT_MAGIC: &[u8; 4] = b"MTRW";
pub const WEIGHT_VERSION: u32 = 1;

/// Parsed container contents.
#[derive(Debug, Clone)]
pub struct Container {
    pub meta: Value,
    pub arrays: Vec<(String, Tensor)>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_container(meta: &Value, arrays: &[(String, &Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHT_MAGIC);
    put_u32(&mut buf, WEIGHT_VERSION);
    let meta = serde_json::to_vec(meta).expect("json");
    put_u32(&mut buf, meta.len() as u32);
    buf.extend_from_slice(&meta);
    put_u32(&mut buf, arrays.len() as u32);
    for (name, t) in arrays {
        put_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.shape.len() as u32);
        for &d in &t.shape {
            put_u32(&mut buf, d as u32);
        }
        for &v in &t.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

pub fn write_container(path: &Path, meta: &Value, arrays: &[(String, &Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).at(path)?);
    w.write_all(&encode_container(meta, arrays)).at(path)?;
    w.flush().at(path)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Load(format!("truncated container at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_container(buf: &[u8]) -> Result<Container> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != WEIGHT_MAGIC {
        return Err(Error::Load("bad magic, not a weight container".into()));
    }
    let version = c.u32()?;
    if version != WEIGHT_VERSION {
        return Err(Error::Load(format!("unsupported container version {version}")));
    }
    let meta_len = c.u32()? as usize;
    let meta: Value = serde_json::from_slice(c.take(meta_len)?)
        .map_err(|e| Error::Load(format!("bad metadata: {e}")))?;
    let count = c.u32()? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Load("array name is not UTF-8".into()))?
            .to_string();
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        arrays.push((name, Tensor { shape, data }));
    }
    if c.pos != buf.len() {
        return Err(Error::Load("trailing bytes after last array".into()));
    }
    Ok(Container { meta, arrays })
}

pub fn read_container(path: &Path) -> Result<Container> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path).at(path)?)
        .read_to_end(&mut buf)
        .at(path)?;
    decode_container(&buf)
}

pub fn params_meta(params: &ModelParams) -> Value {
    serde_json::json!({ "arch": params.config })
}

pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    write_container(path, &params_meta(params), &params.weights.named_tensors())
}

/// Rebuilds model parameters from a container written by [`save_params`] or
/// a training checkpoint.
pub fn params_from_container(c: &Container) -> Result<ModelParams> {
    let arch: ArchConfig = serde_json::from_value(
        c.meta
            .get("arch")
            .cloned()
            .ok_or_else(|| Error::Load("container has no architecture metadata".into()))?,
    )
    .map_err(|e| Error::Load(format!("bad architecture metadata: {e}")))?;
    let mut params = init_parameters(&arch, 0).map_err(|e| Error::Load(e.to_string()))?;
    let names: Vec<(String, Vec<usize>)> = params
        .weights
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape.clone()))
        .collect();
    let mut loaded = Vec::with_capacity(names.len());
    for (name, shape) in &names {
        let t = c
            .get(name)
            .ok_or_else(|| Error::Load(format!("missing array {name}")))?;
        if &t.shape != shape {
            return Err(Error::Load(format!(
                "{name}: expected shape {shape:?}, found {:?}",
                t.shape
            )));
        }
        loaded.push(t.data.clone());
    }
    let mut it = loaded.into_iter();
    for p in super::Partition::ALL {
        for dst in params.weights.partition_tensors_mut(p) {
            dst.data = it.next().expect("count");
        }
    }
    Ok(params)
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    params_from_container(&read_container(path)?)
}
