//! Binary little-endian PLY for Gaussian sets, using the usual splatting
//! property names (`x y z`, `f_dc_*`, `opacity`, `scale_*`, `rot_*`).
//!
//! Scales are stored as log-scales, opacity as a logit and color as the
//! degree-0 spherical-harmonic coefficient. Files are written with `double`
//! properties; `float` files from other tools are read as well.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;

/// Degree-0 spherical harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

const WRITE_ORDER: [&str; 15] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
    "rot_2", "rot_3", "dcp_score",
];

pub fn color_to_sh(c: f64) -> f64 {
    (c - 0.5) / SH_C0
}

pub fn sh_to_color(sh: f64) -> f64 {
    sh * SH_C0 + 0.5
}

pub fn encode(gaussians: &[GaussianPrimitive]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(256 + gaussians.len() * WRITE_ORDER.len() * 8);
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", gaussians.len()).as_bytes());
    for name in WRITE_ORDER {
        out.extend_from_slice(format!("property double {name}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for (i, g) in gaussians.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: "gaussian parameter",
                index: i,
            });
        }
        let values = [
            g.position.x,
            g.position.y,
            g.position.z,
            color_to_sh(g.color.x),
            color_to_sh(g.color.y),
            color_to_sh(g.color.z),
            g.opacity_logit,
            g.log_scale.x,
            g.log_scale.y,
            g.log_scale.z,
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
            g.dcp_score,
        ];
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write(path: &Path, gaussians: &[GaussianPrimitive]) -> Result<()> {
    super::write_file(path, &encode(gaussians)?)
}

pub fn read(path: &Path) -> Result<Vec<GaussianPrimitive>> {
    let bytes = super::read_file(path)?;
    decode(&bytes, &path.display().to_string())
}

#[derive(Clone, Copy, Debug)]
enum Scalar {
    F32,
    F64,
    U8,
    I32,
    U32,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            "uchar" | "uint8" => Scalar::U8,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::U8 => 1,
            Scalar::F32 | Scalar::I32 | Scalar::U32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
            Scalar::U8 => b[0] as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
        }
    }
}

pub fn decode(bytes: &[u8], file: &str) -> Result<Vec<GaussianPrimitive>> {
    let header_end = find_subslice(bytes, b"end_header\n")
        .ok_or_else(|| Error::parse(file, 0, "missing end_header"))?
        + b"end_header\n".len();
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| Error::parse(file, 0, "header is not utf-8"))?;

    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(Error::parse(file, 0, "missing ply magic"));
    }
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => {
                return Err(Error::parse(file, 0, format!("unsupported format {other}")));
            }
            ["element", "vertex", n] => {
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| Error::parse(file, 0, format!("bad vertex count {n}")))?,
                );
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", ty, name] if in_vertex => {
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(file, 0, format!("unsupported property type {ty}")))?;
                props.push((name.to_string(), scalar));
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::parse(file, 0, "list properties are not supported"));
            }
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::parse(file, 0, "missing vertex element"))?;
    if count == 0 {
        return Err(Error::EmptyGaussians);
    }

    let mut offsets = Vec::with_capacity(props.len());
    let mut stride = 0;
    for (_, s) in &props {
        offsets.push(stride);
        stride += s.size();
    }
    let lookup = |name: &str| -> Option<(usize, Scalar)> {
        props
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| (offsets[i], props[i].1))
    };
    let required: Vec<(usize, Scalar)> = WRITE_ORDER[..14]
        .iter()
        .map(|name| lookup(name).ok_or_else(|| Error::parse(file, 0, format!("missing property {name}"))))
        .collect::<Result<_>>()?;
    let score = lookup("dcp_score");

    let body = &bytes[header_end..];
    if body.len() < count * stride {
        return Err(Error::parse(
            file,
            body.len() / stride.max(1),
            format!("truncated body: {} bytes for {count} records", body.len()),
        ));
    }

    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let rec = &body[i * stride..(i + 1) * stride];
        let v: Vec<f64> = required.iter().map(|&(off, s)| s.read(&rec[off..])).collect();
        let dcp_score = score.map(|(off, s)| s.read(&rec[off..])).unwrap_or(0.0);
        if let Some(bad) = v.iter().chain(std::iter::once(&dcp_score)).position(|x| !x.is_finite()) {
            let name = WRITE_ORDER.get(bad).unwrap_or(&"dcp_score");
            return Err(Error::parse(file, i, format!("non-finite {name}")));
        }
        let log_scale = Vector3::new(v[7], v[8], v[9]);
        if log_scale.iter().any(|s| s.exp() <= 0.0) {
            return Err(Error::parse(file, i, "scale must be positive"));
        }
        let rotation = [v[10], v[11], v[12], v[13]];
        if rotation.iter().all(|&q| q == 0.0) {
            return Err(Error::parse(file, i, "zero rotation quaternion"));
        }
        if dcp_score < 0.0 {
            return Err(Error::parse(file, i, "negative dcp_score"));
        }
        out.push(GaussianPrimitive {
            position: Vector3::new(v[0], v[1], v[2]),
            color: Vector3::new(sh_to_color(v[3]), sh_to_color(v[4]), sh_to_color(v[5])),
            opacity_logit: v[6],
            log_scale,
            rotation,
            dcp_score,
        });
    }
    Ok(out)
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}
