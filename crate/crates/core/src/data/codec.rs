//! `.msr` float rasters and binary PGM label masks.
//!
//! `.msr` layout: `b"MSR1"`, height and width as `u32` LE, then
//! `height * width` `f32` LE values, row-major. Nothing may follow.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::IGNORE;

pub const MSR_MAGIC: &[u8; 4] = b"MSR1";
const MSR_HEADER: usize = 12;

/// A single-band float raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Extent(format!("raster extents {height}x{width} must be positive")));
        }
        if data.len() != height * width {
            return Err(Error::Extent(format!(
                "raster {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Raster { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

pub fn encode_raster(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(MSR_HEADER + 4 * r.data.len());
    out.extend_from_slice(MSR_MAGIC);
    out.extend_from_slice(&(r.height as u32).to_le_bytes());
    out.extend_from_slice(&(r.width as u32).to_le_bytes());
    for v in &r.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes an `.msr` image. `path` only labels errors.
pub fn decode_raster(bytes: &[u8], path: &Path) -> Result<Raster> {
    if bytes.len() < MSR_HEADER {
        return Err(Error::format(path, bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MSR_MAGIC {
        return Err(Error::format(path, 0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let (height, width) = (u32_at(4), u32_at(8));
    if height == 0 {
        return Err(Error::format(path, 4, "zero height"));
    }
    if width == 0 {
        return Err(Error::format(path, 8, "zero width"));
    }
    let payload = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .filter(|&n| n <= isize::MAX as usize - MSR_HEADER)
        .ok_or_else(|| Error::format(path, 4, format!("extents {height}x{width} overflow")))?;
    let expected = MSR_HEADER + payload;
    if bytes.len() != expected {
        let offset = bytes.len().min(expected);
        let what = if bytes.len() < expected { "truncated payload" } else { "trailing bytes" };
        return Err(Error::format(
            path,
            offset,
            format!("{what}: {height}x{width} needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(height * width);
    for (i, chunk) in bytes[MSR_HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(path, MSR_HEADER + 4 * i, format!("non-finite value {v}")));
        }
        data.push(v);
    }
    Ok(Raster { height, width, data })
}

pub fn save_raster(path: &Path, r: &Raster) -> Result<()> {
    fs::write(path, encode_raster(r)).map_err(|e| Error::io(path, e))
}

pub fn load_raster(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes, path)
}

/// An 8-bit raster as stored in a PGM file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

pub fn encode_pgm(g: &Gray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", g.width, g.height).into_bytes();
    out.extend_from_slice(&g.data);
    out
}

/// Parses a binary PGM with maxval 255. Comments in the header are allowed.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Gray> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(path, 0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // Whitespace and comments before every header field.
        let start = pos;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if pos == start {
            return Err(Error::format(path, pos, "expected whitespace in header"));
        }
        let digits = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == digits || pos - digits > 9 {
            return Err(Error::format(path, digits, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[digits..pos]).unwrap().parse().unwrap();
        if *field == 0 {
            let name = ["width", "height", "maxval"][k];
            return Err(Error::format(path, digits, format!("zero {name}")));
        }
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(path, pos, format!("maxval {maxval}, expected 255")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, pos, "expected one whitespace byte after maxval"));
    }
    pos += 1;
    let expected = pos + width * height;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            bytes.len().min(expected),
            format!("{width}x{height} needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    Ok(Gray {
        height,
        width,
        data: bytes[pos..].to_vec(),
    })
}

pub fn save_pgm(path: &Path, g: &Gray) -> Result<()> {
    fs::write(path, encode_pgm(g)).map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: &Path) -> Result<Gray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

/// Decodes a PGM label mask: values must be 0, 1, 2 or 255.
pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<Gray> {
    let g = decode_pgm(bytes, path)?;
    let header = bytes.len() - g.data.len();
    if let Some(i) = g.data.iter().position(|&v| v > 2 && v != IGNORE) {
        return Err(Error::format(path, header + i, format!("mask value {} outside {{0, 1, 2, 255}}", g.data[i])));
    }
    Ok(g)
}
