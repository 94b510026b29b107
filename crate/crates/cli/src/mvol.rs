//! `MVOL` binary mask files: magic `MVOL1\0`, little-endian `u32` dims,
//! `f32` spacing, then one byte (0 or 1) per voxel, x fastest.

use std::path::Path;

use metashape_core::volume::VolumeGrid;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 6] = b"MVOL1\0";
const HEADER_LEN: usize = 6 + 12 + 12;

/// A decoding failure with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    pub offset: u64,
    pub detail: String,
}

fn decode_err(offset: usize, detail: impl Into<String>) -> DecodeError {
    DecodeError {
        offset: offset as u64,
        detail: detail.into(),
    }
}

pub fn encode(grid: &VolumeGrid) -> Result<Vec<u8>> {
    if !grid.is_binary() {
        return Err(CliError::config("only binary masks can be stored as MVOL"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + grid.len());
    out.extend_from_slice(MAGIC);
    for d in grid.dims() {
        let d = u32::try_from(d).map_err(|_| CliError::config("grid dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in grid.spacing_mm() {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    out.extend(grid.values().iter().map(|&v| v as u8));
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> std::result::Result<VolumeGrid, DecodeError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(decode_err(0, "bad magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(decode_err(bytes.len(), "truncated header"));
    }
    let dims = [read_u32(bytes, 6), read_u32(bytes, 10), read_u32(bytes, 14)].map(|d| d as usize);
    let spacing = [18, 22, 26].map(|at| f32::from_bits(read_u32(bytes, at)) as f64);
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0 && n <= isize::MAX as usize - HEADER_LEN)
        .ok_or_else(|| decode_err(6, format!("invalid dimensions {dims:?}")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < count {
        return Err(decode_err(
            bytes.len(),
            format!("truncated payload: {} of {count} voxels", payload.len()),
        ));
    }
    if payload.len() > count {
        return Err(decode_err(
            HEADER_LEN + count,
            "trailing bytes after payload",
        ));
    }
    let mut values = Vec::with_capacity(count);
    for (i, &b) in payload.iter().enumerate() {
        if b > 1 {
            return Err(decode_err(
                HEADER_LEN + i,
                format!("voxel byte {b} is not 0 or 1"),
            ));
        }
        values.push(b as f64);
    }
    VolumeGrid::new(dims, spacing, values).map_err(|e| decode_err(18, e.to_string()))
}

pub fn save(path: &Path, grid: &VolumeGrid) -> Result<()> {
    let bytes = encode(grid)?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<VolumeGrid> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        offset: e.offset,
        detail: e.detail,
    })
}
