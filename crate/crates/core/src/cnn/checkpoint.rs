//! `HCNN` files: magic, a length-prefixed TOML header, then raw `f32`
//! tensors each written as rank, extents and little-endian values.

use std::path::Path;

use super::network::NetworkParams;
use super::spec::NetworkSpec;
use crate::error::{read_file, write_file, Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"HCNN";

pub fn encode_checkpoint(header: &str, tensors: &[(Vec<usize>, &[f32])]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (shape, data) in tensors {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated {
                expected: self.pos.saturating_add(n),
                actual: self.bytes.len(),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(String, Vec<Tensor>)> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: "HCNN".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let n = c.u32()?;
    let header = String::from_utf8(c.take(n)?.to_vec()).map_err(|e| Error::Corrupt(e.to_string()))?;
    let count = c.u32()?;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = c.u32()?;
        if rank > 8 {
            return Err(Error::Corrupt(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|l| l.checked_mul(4))
            .ok_or_else(|| Error::ExtentOverflow(shape.iter().map(|&d| d as u32).collect()))?;
        let data = c
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::TrailingBytes(bytes.len() - c.pos));
    }
    Ok((header, tensors))
}

pub fn write_network(spec: &NetworkSpec, params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    write_file(path, encode_checkpoint(&spec.to_toml()?, &params.tensors()))
}

pub fn read_network(path: impl AsRef<Path>) -> Result<(NetworkSpec, NetworkParams)> {
    let (header, tensors) = decode_checkpoint(&read_file(path)?)?;
    let spec = NetworkSpec::from_toml(&header)?;
    let params = NetworkParams::from_tensors(&spec, tensors)?;
    Ok((spec, params))
}
