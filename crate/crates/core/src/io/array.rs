//! Little-endian `f32` array files with a 16-byte header: magic `MMEP`,
//! format version, rank, two reserved bytes, then four `u16` dimensions
//! (unused ones zero).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMEP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(dims: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(Error::InvalidArgument(format!("array rank {} not in 1..=4", dims.len())));
    }
    if let Some(d) = dims.iter().find(|&&d| d > u16::MAX as usize) {
        return Err(Error::InvalidArgument(format!("array dimension {d} exceeds {}", u16::MAX)));
    }
    let count: usize = dims.iter().product();
    if count != data.len() {
        return Err(Error::shape("array encode", count, data.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dims.len() as u8);
    out.extend_from_slice(&[0, 0]);
    for i in 0..4 {
        out.extend_from_slice(&(dims.get(i).copied().unwrap_or(0) as u16).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "missing MMEP header"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(path, format!("unsupported array version {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    if rank == 0 || rank > 4 {
        return Err(Error::format(path, format!("bad rank {rank}")));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u16::from_le_bytes([bytes[8 + 2 * i], bytes[9 + 2 * i]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * count {
        return Err(Error::format(path, format!("expected {} data bytes, found {}", 4 * count, body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims, data))
}

pub fn write(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    let bytes = encode(dims, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
