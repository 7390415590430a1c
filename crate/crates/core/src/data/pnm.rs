//! Binary Netpbm: P5 (grayscale) and P6 (RGB), 8- or 16-bit samples.

use std::io::Write;
use std::path::Path;

use super::{parse_err, Image};
use crate::error::{at_path, dim_err, Result};

pub fn load_pnm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| at_path(path)(e.into()))?;
    read_pnm(&bytes).map_err(at_path(path))
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: u32,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(parse_err(0, "expected magic P5 or P6")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
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
                Some(_) => break,
                None => return Err(parse_err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(pos, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, "header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(parse_err(pos, "expected a single whitespace byte after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(parse_err(2, format!("zero-sized image {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(pos - 1, format!("maxval {maxval} not in 1..=65535")));
    }
    Ok(Header {
        channels,
        width,
        height,
        maxval: maxval as u32,
        payload_start: pos,
    })
}

/// Decodes a binary PGM/PPM, dividing samples by `maxval`.
pub fn read_pnm(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    let wide = h.maxval > 255;
    let bytes_per_sample = if wide { 2 } else { 1 };
    let count = h.width * h.height * h.channels;
    let end = h.payload_start + count * bytes_per_sample;
    if bytes.len() < end {
        return Err(parse_err(
            bytes.len(),
            format!(
                "payload truncated: expected {} bytes after header",
                count * bytes_per_sample
            ),
        ));
    }
    let payload = &bytes[h.payload_start..end];
    let maxval = h.maxval as f64;
    let data: Vec<f64> = if wide {
        payload
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / maxval)
            .collect()
    } else {
        payload.iter().map(|&b| b as f64 / maxval).collect()
    };
    let bits = if wide { 16 } else { 8 };
    Ok(Image::new(vec![h.height, h.width], h.channels, data)?.with_bit_depth(bits))
}

/// Encodes a 2D image with 1 (P5) or 3 (P6) channels. Values are clamped to
/// `[0, 1]` and scaled by `maxval` with rounding.
pub fn encode_pnm(image: &Image, maxval: u16) -> Result<Vec<u8>> {
    if image.spatial_rank() != 2 {
        return Err(dim_err(format!("PNM holds 2D images, got dims {:?}", image.dims())));
    }
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(dim_err(format!("PNM holds 1 or 3 channels, got {c}"))),
    };
    let (h, w) = (image.dims()[0], image.dims()[1]);
    let mut out = format!("{magic}\n{w} {h}\n{maxval}\n").into_bytes();
    let scale = maxval as f64;
    for &v in image.data() {
        let q = (v.clamp(0.0, 1.0) * scale).round() as u16;
        if maxval > 255 {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

pub fn write_pnm(path: &Path, image: &Image, maxval: u16) -> Result<()> {
    let bytes = encode_pnm(image, maxval)?;
    let mut file = std::fs::File::create(path).map_err(|e| at_path(path)(e.into()))?;
    file.write_all(&bytes).map_err(|e| at_path(path)(e.into()))?;
    Ok(())
}

/// Single-channel variant of [`write_pnm`].
pub fn write_pgm(path: &Path, image: &Image, maxval: u16) -> Result<()> {
    if image.channels() != 1 {
        return Err(dim_err(format!("PGM needs 1 channel, got {}", image.channels())));
    }
    write_pnm(path, image, maxval)
}
