//! Raw depth maps: 16-byte header (`DPTH`, width, height, reserved zero,
//! all u32 little-endian after the magic) followed by row-major f32 values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Map;

pub const MAGIC: &[u8; 4] = b"DPTH";
pub const HEADER_LEN: usize = 16;

pub fn encode(map: &Map) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + map.as_slice().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &v in map.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write(path: &Path, map: &Map) -> Result<()> {
    super::write_file(path, &encode(map))
}

pub fn decode(bytes: &[u8], file: &str) -> Result<Map> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::parse(file, 0, "missing DPTH header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (width, height) = (word(4), word(8));
    let body = &bytes[HEADER_LEN..];
    if body.len() != width * height * 4 {
        return Err(Error::parse(file, 0, "depth body size does not match header"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Map::from_vec(width, height, data)
}

pub fn read(path: &Path) -> Result<Map> {
    decode(&super::read_file(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let map = Map::from_fn(3, 2, |x, y| (x + 10 * y) as f64 * 0.5);
        let bytes = encode(&map);
        assert_eq!(&bytes[..4], b"DPTH");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(decode(&bytes, "mem").unwrap(), map);
    }
}
