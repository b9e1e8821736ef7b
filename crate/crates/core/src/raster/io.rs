//! `RSTR` raster files.
//!
//! Little-endian layout:
//!
//! | offset | field                        |
//! |-------:|------------------------------|
//! | 0      | magic `RSTR`                 |
//! | 4      | version `u16` = 1            |
//! | 6      | dtype `u8` (0 = `f32`)       |
//! | 7      | reserved `u8`                |
//! | 8      | width `u32`                  |
//! | 12     | height `u32`                 |
//! | 16     | bands `u16`                  |
//! | 18     | padding `u16`                |
//! | 20     | pixel size `f64`             |
//! | 28     | origin x `f64`               |
//! | 36     | origin y `f64`               |
//! | 44     | nodata `f32`                 |
//! | 48     | padding `f32`                |
//! | 52     | payload, band-sequential     |

use std::fs;
use std::path::Path;

use super::{GridSpec, Raster};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"RSTR";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

pub const RSTR_HEADER_LEN: usize = 52;

pub fn encode(r: &Raster) -> Vec<u8> {
    let mut buf = Vec::with_capacity(RSTR_HEADER_LEN + r.data().len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(DTYPE_F32);
    buf.push(0);
    buf.extend_from_slice(&(r.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(r.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(r.bands() as u16).to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&r.grid().pixel_size.to_le_bytes());
    buf.extend_from_slice(&r.grid().origin_x.to_le_bytes());
    buf.extend_from_slice(&r.grid().origin_y.to_le_bytes());
    buf.extend_from_slice(&r.nodata().to_le_bytes());
    buf.extend_from_slice(&0f32.to_le_bytes());
    for v in r.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 4 {
        return Err(Error::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < RSTR_HEADER_LEN {
        return Err(Error::Truncated);
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());

    let version = u16_at(4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(bytes[6]));
    }
    let width = u32_at(8) as usize;
    let height = u32_at(12) as usize;
    let bands = u16_at(16) as usize;
    let grid = GridSpec::new(width, height, f64_at(20), f64_at(28), f64_at(36));
    let nodata = f32::from_le_bytes(bytes[44..48].try_into().unwrap());

    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(bands))
        .ok_or_else(|| Error::malformed("raster header", "dimensions overflow"))?;
    let payload = &bytes[RSTR_HEADER_LEN..];
    if payload.len() < n * 4 {
        return Err(Error::Truncated);
    }
    if payload.len() > n * 4 {
        return Err(Error::malformed("raster", "trailing bytes after payload"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Raster::new(grid, bands, nodata, data)
        .map_err(|e| Error::malformed("raster", e.to_string()))
}

pub fn write_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(raster)).map_err(Error::at(path))?;
    Ok(())
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(Error::at(path))?)
}
