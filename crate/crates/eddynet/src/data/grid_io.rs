//! On-disk exchange formats for grids and masks.
//!
//! Grid file (all little-endian):
//!
//! ```text
//! magic   b"SSHG"
//! version u32 (currently 1)
//! ----- checksummed region -----
//! rows u32, cols u32
//! lat0 f64, lon0 f64, resolution f64, fill_value f64
//! payload rows*cols f32
//! ----- end checksummed region -----
//! crc32 u32 of the checksummed region
//! ```
//!
//! Mask file: magic `b"MASK"`, rows u32, cols u32, then rows*cols label
//! bytes. Masks can also be rendered as binary portable pixmaps with the
//! fixed class palette (non-eddy blue, anticyclonic green, cyclonic brown).

use std::path::Path;

use super::{SegmentationMask, SshGrid};
use crate::bytes::{put_f32_slice, put_f64, put_u32, Cursor};
use crate::error::{Error, Result};

const GRID_MAGIC: [u8; 4] = *b"SSHG";
const GRID_VERSION: u32 = 1;
const MASK_MAGIC: [u8; 4] = *b"MASK";

/// RGB palette indexed by class label: blue, green, brown.
pub const CLASS_COLORS: [[u8; 3]; 3] = [[0, 0, 255], [0, 160, 0], [139, 69, 19]];

pub fn encode_grid(grid: &SshGrid) -> Vec<u8> {
    let mut body = Vec::with_capacity(32 + 4 * grid.values.len());
    put_u32(&mut body, grid.rows as u32);
    put_u32(&mut body, grid.cols as u32);
    put_f64(&mut body, grid.lat0);
    put_f64(&mut body, grid.lon0);
    put_f64(&mut body, grid.resolution);
    put_f64(&mut body, grid.fill_value);
    put_f32_slice(&mut body, &grid.values);
    let crc = crc32fast::hash(&body);
    let mut out = Vec::with_capacity(body.len() + 12);
    out.extend_from_slice(&GRID_MAGIC);
    put_u32(&mut out, GRID_VERSION);
    out.extend_from_slice(&body);
    put_u32(&mut out, crc);
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<SshGrid> {
    if bytes.len() < 12 {
        return Err(Error::Truncated(format!("{} bytes is too short for a grid file", bytes.len())));
    }
    let found: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    if found != GRID_MAGIC {
        return Err(Error::BadMagic { expected: GRID_MAGIC, found });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("length checked"));
    if version != GRID_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let body = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("length checked"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }
    let mut cur = Cursor::new(body);
    let rows = cur.u32("rows")? as usize;
    let cols = cur.u32("cols")? as usize;
    let lat0 = cur.f64("lat0")?;
    let lon0 = cur.f64("lon0")?;
    let resolution = cur.f64("resolution")?;
    let fill_value = cur.f64("fill_value")?;
    let values = cur.f32_slice(rows * cols, "grid payload")?;
    if cur.remaining() != 0 {
        return Err(Error::shape("grid payload", rows * cols, rows * cols + cur.remaining() / 4));
    }
    if !fill_value.is_finite() {
        return Err(Error::NonFinite("grid fill_value".into()));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("grid cell {pos}")));
    }
    SshGrid::new(rows, cols, values, lat0, lon0, resolution, fill_value)
}

pub fn save_grid(grid: &SshGrid, path: &Path) -> Result<()> {
    std::fs::write(path, encode_grid(grid))?;
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<SshGrid> {
    decode_grid(&std::fs::read(path)?)
}

pub fn encode_mask(mask: &SegmentationMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + mask.labels().len());
    out.extend_from_slice(&MASK_MAGIC);
    put_u32(&mut out, mask.rows() as u32);
    put_u32(&mut out, mask.cols() as u32);
    out.extend_from_slice(mask.labels());
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<SegmentationMask> {
    if bytes.len() < 12 {
        return Err(Error::Truncated(format!("{} bytes is too short for a mask file", bytes.len())));
    }
    let found: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    if found != MASK_MAGIC {
        return Err(Error::BadMagic { expected: MASK_MAGIC, found });
    }
    let mut cur = Cursor::new(&bytes[4..]);
    let rows = cur.u32("rows")? as usize;
    let cols = cur.u32("cols")? as usize;
    let labels = cur.take(rows * cols, "mask labels")?.to_vec();
    if cur.remaining() != 0 {
        return Err(Error::shape("mask payload", rows * cols, rows * cols + cur.remaining()));
    }
    SegmentationMask::from_labels(rows, cols, labels)
}

pub fn save_mask(mask: &SegmentationMask, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mask(mask))?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<SegmentationMask> {
    decode_mask(&std::fs::read(path)?)
}

/// Binary PPM (P6) rendering with the fixed class palette.
pub fn encode_mask_ppm(mask: &SegmentationMask) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", mask.cols(), mask.rows());
    let mut out = Vec::with_capacity(header.len() + 3 * mask.labels().len());
    out.extend_from_slice(header.as_bytes());
    for &label in mask.labels() {
        out.extend_from_slice(&CLASS_COLORS[label as usize]);
    }
    out
}

pub fn save_mask_ppm(mask: &SegmentationMask, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mask_ppm(mask))?;
    Ok(())
}
