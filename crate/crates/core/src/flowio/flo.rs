//! Middlebury `.flo`: little-endian f32 magic `202021.25`, i32 width,
//! i32 height, then interleaved `(u, v)` f32 pairs in row-major order.

use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;

/// Parses a `.flo` byte stream. The result has `gap = 1` and
/// `source_frame = 0`; callers that know better set them with
/// [`FlowField::with_meta`].
pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!("bad .flo magic {magic}")));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 || height <= 0 {
        return Err(Error::Format(format!("bad .flo dimensions {width}x{height}")));
    }
    let (width, height) = (width as usize, height as usize);
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format("oversized .flo dimensions".into()))?;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let n = width * height;
    let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for px in bytes[HEADER_LEN..].chunks_exact(8) {
        u.push(f32::from_le_bytes(px[0..4].try_into().unwrap()));
        v.push(f32::from_le_bytes(px[4..8].try_into().unwrap()));
    }
    FlowField::new(height, width, u, v, 1, 0).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_flo(f: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * f.u().len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(f.width() as i32).to_le_bytes());
    out.extend_from_slice(&(f.height() as i32).to_le_bytes());
    for (a, b) in f.u().iter().zip(f.v()) {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

pub fn read_flo_file(path: &Path) -> Result<FlowField> {
    read_flo(&std::fs::read(path)?)
}

pub fn write_flo_file(path: &Path, f: &FlowField) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, write_flo(f))?;
    Ok(())
}
