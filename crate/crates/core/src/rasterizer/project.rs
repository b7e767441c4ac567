use nalgebra::{Matrix2x3, Matrix3, Vector3};

use crate::camera::Camera;
use crate::gaussian::GaussianPrimitive;

/// Added to the projected covariance diagonal, in px².
pub const LOW_PASS: f64 = 0.3;
/// Splats are rasterized out to this many standard deviations.
pub const EXTENT_SIGMAS: f64 = 3.0;
/// Centers further than this fraction of the image outside the frame are culled.
pub const GUARD_BAND: f64 = 0.3;

/// Inclusive pixel rectangle; empty when `x0 > x1` or `y0 > y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl PixelBox {
    #[inline]
    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn is_empty(&self) -> bool {
        self.x0 > self.x1 || self.y0 > self.y1
    }
}

/// A Gaussian after projection into one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Projected2DGaussian {
    pub mean2d: [f64; 2],
    /// Symmetric 2×2 covariance `[xx, xy, yy]` including the low-pass term.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f64; 3],
    /// Camera-space z.
    pub depth: f64,
    pub source_index: usize,
    /// Activated opacity, including any dropout compensation factor.
    pub opacity: f64,
    pub color: [f64; 3],
    pub bbox: PixelBox,
}

pub(crate) struct ProjectionGeometry {
    pub p_cam: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub cov_cam: Matrix3<f64>,
}

pub(crate) fn geometry(g: &GaussianPrimitive, camera: &Camera) -> ProjectionGeometry {
    let p_cam = camera.world_to_camera(&g.position);
    let k = &camera.intrinsics;
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let jacobian = Matrix2x3::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z));
    let cov_cam = camera.rotation * g.covariance() * camera.rotation.transpose();
    ProjectionGeometry {
        p_cam,
        jacobian,
        cov_cam,
    }
}

pub(crate) enum Projection {
    Culled,
    Singular,
    Splat(Projected2DGaussian),
}

pub(crate) fn project_one(g: &GaussianPrimitive, index: usize, camera: &Camera, opacity_scale: f64) -> Projection {
    let p_cam = camera.world_to_camera(&g.position);
    let z = p_cam.z;
    if !(z > camera.near && z < camera.far) {
        return Projection::Culled;
    }
    let k = &camera.intrinsics;
    let u = k.fx * p_cam.x / z + k.cx;
    let v = k.fy * p_cam.y / z + k.cy;
    let (w, h) = (camera.width as f64, camera.height as f64);
    if u < -GUARD_BAND * w || u > (1.0 + GUARD_BAND) * w || v < -GUARD_BAND * h || v > (1.0 + GUARD_BAND) * h {
        return Projection::Culled;
    }
    let geo = geometry(g, camera);
    let cov = geo.jacobian * geo.cov_cam * geo.jacobian.transpose();
    let (a, b, c) = (cov[(0, 0)] + LOW_PASS, 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)] + LOW_PASS);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return Projection::Singular;
    }
    let conic = [c / det, -b / det, a / det];
    let rx = EXTENT_SIGMAS * a.sqrt();
    let ry = EXTENT_SIGMAS * c.sqrt();
    let bbox = PixelBox {
        x0: ((u - rx).ceil().max(0.0)) as i32,
        y0: ((v - ry).ceil().max(0.0)) as i32,
        x1: ((u + rx).floor().min(w - 1.0)) as i32,
        y1: ((v + ry).floor().min(h - 1.0)) as i32,
    };
    Projection::Splat(Projected2DGaussian {
        mean2d: [u, v],
        cov2d: [a, b, c],
        conic,
        depth: z,
        source_index: index,
        opacity: g.opacity() * opacity_scale,
        color: [g.color.x, g.color.y, g.color.z],
        bbox,
    })
}

/// Sort by ascending depth, ties broken by source index.
pub(crate) fn sort_splats(splats: &mut [Projected2DGaussian]) {
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));
}

pub(crate) fn project_filtered(
    gaussians: &[GaussianPrimitive],
    camera: &Camera,
    mask: Option<&[bool]>,
    opacity_scale: Option<&[f64]>,
) -> (Vec<Projected2DGaussian>, usize) {
    let mut singular = 0;
    let mut out = Vec::with_capacity(gaussians.len());
    for (i, g) in gaussians.iter().enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let scale = opacity_scale.map_or(1.0, |s| s[i]);
        match project_one(g, i, camera, scale) {
            Projection::Splat(s) => out.push(s),
            Projection::Singular => singular += 1,
            Projection::Culled => {}
        }
    }
    sort_splats(&mut out);
    (out, singular)
}

/// Project every Gaussian into `camera`. Gaussians outside the depth range
/// or far outside the frame are culled; the rest come back depth-sorted.
pub fn project(gaussians: &[GaussianPrimitive], camera: &Camera) -> Vec<Projected2DGaussian> {
    project_filtered(gaussians, camera, None, None).0
}
