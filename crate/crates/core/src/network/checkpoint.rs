//! Flat binary checkpoints: `"RQNN"`, a `u32` version, then for every
//! parameter its name length (`u32`), UTF-8 name, rank (`u32`), dimensions
//! (`u64` each) and little-endian `f64` values. All integers little-endian.

use std::path::Path;

use super::engine::{Network, Param};
use crate::error::{Error, Result};
use crate::tensor::RTensor;

pub const MAGIC: &[u8; 4] = b"RQNN";
pub const VERSION: u32 = 1;

pub fn encode_params(params: &[Param]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<Param>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("missing RQNN magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut params = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Param {
            name,
            value: RTensor::new(shape, data)?,
        });
    }
    Ok(params)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, encode_params(net.params()))?;
    Ok(())
}

/// Loads parameters into `net`; names and shapes must match exactly.
pub fn load_checkpoint(net: &mut Network, path: &Path) -> Result<()> {
    let loaded = decode_params(&std::fs::read(path)?)?;
    apply_params(net, loaded)
}

pub fn apply_params(net: &mut Network, loaded: Vec<Param>) -> Result<()> {
    if loaded.len() != net.params().len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {}",
            net.params().len(),
            loaded.len()
        )));
    }
    for (dst, src) in net.params().iter().zip(&loaded) {
        if dst.name != src.name || dst.value.shape() != src.value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {} {:?} does not match {} {:?}",
                src.name,
                src.value.shape(),
                dst.name,
                dst.value.shape()
            )));
        }
    }
    for (dst, src) in net.params_mut().iter_mut().zip(loaded) {
        dst.value = src.value;
    }
    Ok(())
}
