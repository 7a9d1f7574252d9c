//! CMFT binary tensor format.
//!
//! Layout: magic `CMFT`, one version byte (0x01), one rank byte, then
//! rank little-endian u32 dims, then `product(dims)` little-endian f32
//! values in row-major order.

use std::fs;
use std::path::Path;

use super::{Tensor, MAX_RANK};
use crate::error::{CmfError, Result};

pub const CMFT_MAGIC: [u8; 4] = *b"CMFT";
pub const CMFT_VERSION: u8 = 0x01;

pub fn encode_cmft(tensor: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(6 + 4 * tensor.rank() + 4 * tensor.len());
    buf.extend_from_slice(&CMFT_MAGIC);
    buf.push(CMFT_VERSION);
    buf.push(tensor.rank() as u8);
    for &d in tensor.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_cmft(bytes: &[u8]) -> Result<Tensor> {
    let err = |detail: String| CmfError::Format(detail);
    if bytes.len() < 6 {
        return Err(err("CMFT header truncated".into()));
    }
    if bytes[0..4] != CMFT_MAGIC {
        return Err(err("bad magic, expected CMFT".into()));
    }
    if bytes[4] != CMFT_VERSION {
        return Err(err(format!("unsupported CMFT version {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(err(format!("CMFT rank {rank} outside 1..={MAX_RANK}")));
    }
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(err("CMFT dims truncated".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 6 + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        dims.push(d);
    }
    let count: usize = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| err("CMFT dims overflow".into()))?;
    let expected = header + 4 * count;
    if bytes.len() != expected {
        return Err(err(format!(
            "CMFT payload is {} bytes, dims {} require {}",
            bytes.len() - header,
            super::dims_str(&dims),
            4 * count
        )));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = header + 4 * i;
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    Tensor::new(dims, data)
}

pub fn write_cmft(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cmft(tensor)).map_err(|e| CmfError::io(path, e))
}

pub fn read_cmft(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CmfError::io(path, e))?;
    decode_cmft(&bytes).map_err(|e| match e {
        CmfError::Format(detail) => CmfError::parse(path, detail),
        other => other,
    })
}
