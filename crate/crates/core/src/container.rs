//! Binary float container shared by network checkpoints and unclamped
//! image sidecars.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8 bytes   magic "N2NCKPT1"
//! u32       descriptor length in bytes
//! ...       UTF-8 descriptor
//! u64       value count
//! count*4   f32 values
//! ```

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"N2NCKPT1";

pub fn encode(descriptor: &str, values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 + descriptor.len() + 8 + values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(descriptor.as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(String, Vec<f32>)> {
    let err = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(err("bad magic"));
    }
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        let slice = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {pos}")))?;
        pos += n;
        Ok(slice)
    };
    let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let descriptor = std::str::from_utf8(take(len)?)
        .map_err(|_| err("descriptor is not UTF-8"))?
        .to_string();
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let count = usize::try_from(count).map_err(|_| err("value count overflows"))?;
    let payload = take(count.checked_mul(4).ok_or_else(|| err("value count overflows"))?)?;
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if pos != bytes.len() {
        return Err(err("trailing bytes after payload"));
    }
    Ok((descriptor, values))
}

pub fn write(path: &Path, descriptor: &str, values: &[f32]) -> Result<()> {
    fs::write(path, encode(descriptor, values)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(String, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
