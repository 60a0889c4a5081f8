//! Raw `F32I` rasters and binary PGM (P5) import/export.
//!
//! `F32I` layout: the four bytes `F32I`, height and width as little-endian
//! `u32`, then `height * width` little-endian IEEE-754 `f32` values in
//! row-major order. PGM samples are mapped linearly between `0..=maxval`
//! and `[0, 1]`; 16-bit samples are big-endian as the format requires.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub const F32I_MAGIC: &[u8; 4] = b"F32I";

pub fn encode_f32i(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + img.len() * 4);
    out.extend_from_slice(F32I_MAGIC);
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_f32i(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 12 || &bytes[..4] != F32I_MAGIC {
        return Err(bad("missing F32I header".into()));
    }
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if height == 0 || width == 0 {
        return Err(bad(format!("zero dimension {height}x{width}")));
    }
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    let payload = &bytes[12..];
    if payload.len() != expected {
        return Err(bad(format!(
            "expected {expected} payload bytes for {height}x{width}, found {}",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite sample".into()));
    }
    Image::from_vec(height, width, data).map_err(|e| bad(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

/// Encode as binary PGM, clamping to `[0, 1]` first.
pub fn encode_pgm(img: &Image, depth: PgmDepth) -> Vec<u8> {
    let maxval = depth.maxval();
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        match depth {
            PgmDepth::Eight => out.push(q as u8),
            PgmDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
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
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header field"))?;
    }
    // exactly one whitespace byte separates header and raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator after header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("invalid dimensions or maxval"));
    }
    let (w, h) = (width as usize, height as usize);
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let raster = &bytes[pos..];
    if raster.len() < w * h * sample_bytes {
        return Err(bad("truncated raster"));
    }
    let scale = maxval as f64;
    let data = (0..w * h)
        .map(|i| {
            let q = if sample_bytes == 1 {
                raster[i] as u32
            } else {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
            };
            q as f64 / scale
        })
        .collect();
    Image::from_vec(h, w, data)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_f32i(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write_bytes(path.as_ref(), &encode_f32i(img))
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Image, depth: PgmDepth) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pgm(img, depth))
}

/// Load an image, choosing the decoder from the file's magic bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(F32I_MAGIC) {
        decode_f32i(&bytes, path)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(&bytes, path)
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            detail: "unrecognized image format (expected F32I or P5 PGM)".into(),
        })
    }
}
