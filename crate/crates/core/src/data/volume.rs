//! STV1 raw volumes: magic `STV1`, little-endian `u32` D, H, W, C, then
//! `D·H·W·C` little-endian `f32` samples (channel fastest).

use std::path::Path;

use super::{parse_err, Image};
use crate::error::{at_path, dim_err, Result};

const MAGIC: &[u8; 4] = b"STV1";
const HEADER_LEN: usize = 20;

pub fn load_volume(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| at_path(path)(e.into()))?;
    read_volume(&bytes).map_err(at_path(path))
}

pub fn read_volume(bytes: &[u8]) -> Result<Image> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(parse_err(0, "expected magic STV1"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(bytes.len(), "truncated STV1 header"));
    }
    let field = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
    };
    let (d, h, w, c) = (field(0), field(1), field(2), field(3));
    if d == 0 || h == 0 || w == 0 || c == 0 {
        return Err(parse_err(4, format!("zero extent in dims {d}x{h}x{w}x{c}")));
    }
    let count = d
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| parse_err(4, "dims overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(parse_err(
            HEADER_LEN,
            format!(
                "dims {d}x{h}x{w}x{c} need {} payload bytes, found {}",
                count * 4,
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(Image::new(vec![d, h, w], c, data)?.with_bit_depth(32))
}

pub fn encode_volume(image: &Image) -> Result<Vec<u8>> {
    if image.spatial_rank() != 3 {
        return Err(dim_err(format!("STV1 holds 3D volumes, got dims {:?}", image.dims())));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + image.data().len() * 4);
    out.extend_from_slice(MAGIC);
    for &e in image.dims().iter().chain(std::iter::once(&image.channels())) {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in image.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn write_volume(path: &Path, image: &Image) -> Result<()> {
    std::fs::write(path, encode_volume(image)?).map_err(|e| at_path(path)(e.into()))?;
    Ok(())
}
