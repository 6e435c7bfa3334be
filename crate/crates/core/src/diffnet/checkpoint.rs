//! Little-endian parameter checkpoints.
//!
//! Layout: magic `SDNC`, `u32` version, then for each parameter
//! `u32` name length, name bytes (UTF-8), `u32` rank, `rank × u32` dims,
//! `f32` payload. Parameters run until end of file.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Network, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"SDNC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

pub fn encode<T: Real>(net: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("checkpoint magic is not SDNC".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut entries = Vec::new();
    while c.pos < buf.len() {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = c.u32()? as usize;
        let dims = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().map(|&d| d as usize).product();
        let values = c
            .take(count * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        entries.push(CheckpointEntry { name, dims, values });
    }
    Ok(entries)
}

pub fn save<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(net)).map_err(|e| Error::io(path, e))
}

/// Loads parameters by name into `net`; every parameter must be present
/// with a matching shape.
pub fn load<T: Real>(net: &mut Network<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    apply(net, &decode(&buf)?)
}

pub fn apply<T: Real>(net: &mut Network<T>, entries: &[CheckpointEntry]) -> Result<()> {
    for p in net.params_mut() {
        let e = entries
            .iter()
            .find(|e| e.name == p.name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter '{}'", p.name)))?;
        let dims: Vec<usize> = e.dims.iter().map(|&d| d as usize).collect();
        if dims != p.value.shape() {
            return Err(Error::Shape(format!(
                "parameter '{}': checkpoint {:?} vs network {:?}",
                p.name,
                dims,
                p.value.shape()
            )));
        }
        p.value = Tensor::new(&dims, e.values.iter().map(|&v| T::lit(v as f64)).collect())?;
    }
    Ok(())
}
