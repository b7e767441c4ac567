//! Camera lists, one camera per line:
//!
//! ```text
//! id fx fy cx cy width height near far r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2
//! ```
//!
//! The trailing twelve numbers are the world-to-camera `[R | t]` matrix in
//! row-major order. Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::camera::{Camera, Intrinsics};
use crate::error::{Error, Result};

const FIELDS: usize = 21;

pub fn encode(cameras: &[Camera]) -> String {
    let mut out = String::from("# id fx fy cx cy width height near far [R|t] row-major\n");
    for c in cameras {
        let k = &c.intrinsics;
        write!(
            out,
            "{} {} {} {} {} {} {} {} {}",
            c.id, k.fx, k.fy, k.cx, k.cy, c.width, c.height, c.near, c.far
        )
        .unwrap();
        for r in 0..3 {
            for col in 0..3 {
                write!(out, " {}", c.rotation[(r, col)]).unwrap();
            }
            write!(out, " {}", c.translation[r]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write(path: &Path, cameras: &[Camera]) -> Result<()> {
    super::write_file(path, encode(cameras).as_bytes())
}

pub fn read(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&text, &path.display().to_string())
}

pub fn decode(text: &str, file: &str) -> Result<Vec<Camera>> {
    let mut cameras = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record = cameras.len();
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != FIELDS {
            return Err(Error::parse(
                file,
                record,
                format!("expected {FIELDS} fields, found {}", parts.len()),
            ));
        }
        let int = |i: usize| {
            parts[i]
                .parse::<u64>()
                .map_err(|_| Error::parse(file, record, format!("bad integer `{}`", parts[i])))
        };
        let float = |i: usize| {
            let v = parts[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(file, record, format!("bad number `{}`", parts[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(file, record, format!("non-finite value `{}`", parts[i])))
            }
        };
        let mut rotation = Matrix3::zeros();
        let mut translation = Vector3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                rotation[(r, c)] = float(9 + r * 4 + c)?;
            }
            translation[r] = float(9 + r * 4 + 3)?;
        }
        let camera = Camera {
            id: int(0)? as u32,
            intrinsics: Intrinsics {
                fx: float(1)?,
                fy: float(2)?,
                cx: float(3)?,
                cy: float(4)?,
            },
            width: int(5)? as usize,
            height: int(6)? as usize,
            near: float(7)?,
            far: float(8)?,
            rotation,
            translation,
        };
        camera
            .validate()
            .map_err(|e| Error::parse(file, record, e.to_string()))?;
        cameras.push(camera);
    }
    Ok(cameras)
}
