//! Image file I/O. Binary PGM (P5, 8 or 16 bit) is always available; PNG
//! grayscale goes through the `image` crate.
//!
//! Loaded samples are rescaled by `255 / maxval`, so 8-bit files come back
//! as their integer values. Saving always writes 8 bits: samples are clamped
//! to `[0, 255]` and rounded.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            reason: "unsupported format (expected binary PGM or PNG)".into(),
        })
    }
}

/// Writes 8-bit PGM, or PNG when the extension is `.png`.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let pixels = quantize(img);
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if is_png {
        let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, pixels)
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(source) => io_err(source),
                other => Error::Format {
                    path: path.to_path_buf(),
                    reason: other.to_string(),
                },
            })
    } else {
        fs::write(path, encode_pgm(img.width(), img.height(), &pixels)).map_err(io_err)
    }
}

pub(crate) fn quantize(img: &Image) -> Vec<u8> {
    img.samples()
        .iter()
        .map(|v| v.clamp(0.0, 255.0).round() as u8)
        .collect()
}

pub(crate) fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses the P5 header and returns `(width, height, maxval, data offset)`.
pub(crate) fn parse_pgm_header(bytes: &[u8]) -> std::result::Result<(usize, usize, u32, usize), String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated PGM header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed PGM header")?;
    }
    // exactly one whitespace byte separates maxval from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed PGM header".into());
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("PGM has zero dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("PGM maxval {maxval} out of range"));
    }
    Ok((width, height, maxval as u32, pos + 1))
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let (width, height, maxval, offset) = parse_pgm_header(bytes)?;
    let count = width * height;
    let data = &bytes[offset..];
    let scale = 255.0 / f64::from(maxval);
    let samples: Vec<f64> = if maxval < 256 {
        if data.len() < count {
            return Err("truncated PGM raster".into());
        }
        data[..count].iter().map(|&b| f64::from(b) * scale).collect()
    } else {
        if data.len() < 2 * count {
            return Err("truncated PGM raster".into());
        }
        data[..2 * count]
            .chunks_exact(2)
            .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) * scale)
            .collect()
    };
    Image::new(width, height, samples).map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Image, String> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let samples = match decoded {
        image::DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) * 255.0 / 65535.0)
            .collect(),
        other => other.into_luma8().into_raw().into_iter().map(f64::from).collect(),
    };
    Image::new(width, height, samples).map_err(|e| e.to_string())
}
