//! Binary PPM (P6, maxval 255).

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.as_slice().iter().map(|&v| quantize(v)));
    out
}

pub fn write(path: &Path, image: &Image) -> Result<()> {
    super::write_file(path, &encode(image))
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = super::read_file(path)?;
    decode(&bytes, &path.display().to_string())
}

pub fn decode(bytes: &[u8], file: &str) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(file, 0, "truncated ppm header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::parse(file, 0, format!("expected P6, found {}", fields[0])));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(file, 0, format!("bad {what} `{s}`")))
    };
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(Error::parse(file, 0, format!("unsupported maxval {maxval}")));
    }
    let n = width * height * 3;
    if bytes.len() < pos + n {
        return Err(Error::parse(file, 0, "truncated raster"));
    }
    let data = bytes[pos..pos + n].iter().map(|&b| b as f64 / 255.0).collect();
    Image::from_vec(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact_on_quantized_values() {
        let img = Image::from_fn(9, 7, |x, y| [x as f64 / 8.0, y as f64 / 6.0, 0.25]);
        let once = decode(&encode(&img), "mem").unwrap();
        let twice = decode(&encode(&once), "mem").unwrap();
        assert_eq!(once, twice);
        for (a, b) in img.as_slice().iter().zip(once.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        let img = decode(&bytes, "mem").unwrap();
        assert_eq!(img.get(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.get(1, 0), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_p3() {
        assert!(decode(b"P3\n1 1\n255\n0 0 0\n", "mem").is_err());
    }
}
