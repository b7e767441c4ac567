use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::Result;
use crate::gaussian::{normalize_quat, param, GaussianPrimitive, ParamBlock, PARAM_COUNT};
use crate::image::Image;
use crate::rasterizer::{
    geometry, render_cached, splat_alpha, ForwardCache, Projected2DGaussian, RenderOptions, RenderOutput, ALPHA_MAX,
    TRANSMITTANCE_MIN,
};

use super::loss::loss_and_grad;

/// Per-Gaussian loss gradients for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGradients {
    /// Laid out like [`GaussianPrimitive::params`]. The rotation block is
    /// already projected onto the tangent of the unit sphere.
    pub params: Vec<ParamBlock>,
    /// Norm of the screen-space mean gradient in normalized device units.
    pub grad2d_norm: Vec<f64>,
    /// Whether the Gaussian was rasterized in this view at all.
    pub in_view: Vec<bool>,
}

impl GaussianGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            params: vec![[0.0; PARAM_COUNT]; n],
            grad2d_norm: vec![0.0; n],
            in_view: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

pub struct BackwardOutput {
    pub loss: f64,
    pub grads: GaussianGradients,
    pub render: RenderOutput,
}

pub fn backward(
    gaussians: &[GaussianPrimitive],
    camera: &Camera,
    gt: &Image,
    mask: Option<&[bool]>,
    lambda1: f64,
) -> Result<(f64, GaussianGradients)> {
    let out = backward_with(gaussians, camera, gt, &RenderOptions::masked(mask), lambda1)?;
    Ok((out.loss, out.grads))
}

pub fn backward_with(
    gaussians: &[GaussianPrimitive],
    camera: &Camera,
    gt: &Image,
    opts: &RenderOptions,
    lambda1: f64,
) -> Result<BackwardOutput> {
    let (render, cache) = render_cached(gaussians, camera, opts)?;
    let (loss, dl_dc) = loss_and_grad(&render.color, gt, lambda1)?;
    let splat_grads = splat_gradients(&cache, camera, &dl_dc);
    let mut grads = GaussianGradients::zeros(gaussians.len());
    let half = Vector2::new(camera.width as f64 * 0.5, camera.height as f64 * 0.5);
    for (s, sg) in cache.splats.iter().zip(&splat_grads) {
        let i = s.source_index;
        let scale = opts.opacity_scale.map_or(1.0, |v| v[i]);
        grads.params[i] = chain_to_params(&gaussians[i], camera, s, sg, scale);
        grads.grad2d_norm[i] = Vector2::new(sg.mean[0] * half.x, sg.mean[1] * half.y).norm();
        grads.in_view[i] = true;
    }
    Ok(BackwardOutput { loss, grads, render })
}

/// Loss gradients with respect to the 2D splat quantities.
#[derive(Clone, Copy, Debug, Default)]
struct SplatGrad {
    mean: [f64; 2],
    /// With respect to the full symmetric conic matrix: `[00, 01 (= 10), 11]`.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

struct Visit {
    pos: usize,
    alpha: f64,
    g: f64,
    t: f64,
    dx: f64,
    dy: f64,
}

fn splat_gradients(cache: &ForwardCache, camera: &Camera, dl_dc: &Image) -> Vec<SplatGrad> {
    let (width, height) = (camera.width, camera.height);
    let grid = &cache.grid;
    let splats = &cache.splats;
    let per_tile: Vec<Vec<SplatGrad>> = (0..grid.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &grid.lists[tile];
            let mut acc = vec![SplatGrad::default(); list.len()];
            let (xs, ys) = grid.tile_pixels(tile, width, height);
            let mut visits: Vec<Visit> = Vec::new();
            for y in ys {
                for x in xs.clone() {
                    visits.clear();
                    let (xf, yf) = (x as f64, y as f64);
                    let mut t = 1.0;
                    for (pos, &k) in list.iter().enumerate() {
                        if t < TRANSMITTANCE_MIN {
                            break;
                        }
                        let s = &splats[k as usize];
                        if !s.bbox.contains(x as i32, y as i32) {
                            continue;
                        }
                        let (alpha, g) = splat_alpha(s, xf, yf);
                        visits.push(Visit {
                            pos,
                            alpha,
                            g,
                            t,
                            dx: xf - s.mean2d[0],
                            dy: yf - s.mean2d[1],
                        });
                        t *= 1.0 - alpha;
                    }
                    let gc = dl_dc.get(x, y);
                    let mut behind = [0.0; 3];
                    for v in visits.iter().rev() {
                        let s = &splats[list[v.pos] as usize];
                        let a = &mut acc[v.pos];
                        let w = v.alpha * v.t;
                        let mut d_alpha = 0.0;
                        for k in 0..3 {
                            a.color[k] += gc[k] * w;
                            d_alpha += (s.color[k] - behind[k]) * gc[k];
                            behind[k] = s.color[k] * v.alpha + (1.0 - v.alpha) * behind[k];
                        }
                        d_alpha *= v.t;
                        if s.opacity * v.g >= ALPHA_MAX {
                            continue;
                        }
                        a.opacity += d_alpha * v.g;
                        let d_power = d_alpha * v.alpha;
                        let [qa, qb, qc] = s.conic;
                        a.mean[0] += d_power * (qa * v.dx + qb * v.dy);
                        a.mean[1] += d_power * (qb * v.dx + qc * v.dy);
                        a.conic[0] -= 0.5 * d_power * v.dx * v.dx;
                        a.conic[1] -= 0.5 * d_power * v.dx * v.dy;
                        a.conic[2] -= 0.5 * d_power * v.dy * v.dy;
                    }
                }
            }
            acc
        })
        .collect();

    let mut out = vec![SplatGrad::default(); splats.len()];
    for (tile, acc) in per_tile.iter().enumerate() {
        for (pos, g) in acc.iter().enumerate() {
            out[grid.lists[tile][pos] as usize].add(g);
        }
    }
    out
}

/// Derivatives of the rotation matrix of a unit quaternion (w, x, y, z)
/// with respect to each component.
fn rotation_partials(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q;
    let t = 2.0;
    [
        Matrix3::new(0.0, -t * z, t * y, t * z, 0.0, -t * x, -t * y, t * x, 0.0),
        Matrix3::new(0.0, t * y, t * z, t * y, -2.0 * t * x, -t * w, t * z, t * w, -2.0 * t * x),
        Matrix3::new(-2.0 * t * y, t * x, t * w, t * x, 0.0, t * z, -t * w, t * z, -2.0 * t * y),
        Matrix3::new(-2.0 * t * z, -t * w, t * x, t * w, -2.0 * t * z, t * y, t * x, t * y, 0.0),
    ]
}

fn chain_to_params(
    g: &GaussianPrimitive,
    camera: &Camera,
    s: &Projected2DGaussian,
    sg: &SplatGrad,
    opacity_scale: f64,
) -> ParamBlock {
    let mut out = [0.0; PARAM_COUNT];
    let geo = geometry(g, camera);
    let jac = geo.jacobian;
    let w = camera.rotation;

    // conic -> 2D covariance -> camera covariance and Jacobian
    let q = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let g_conic = Matrix2::new(sg.conic[0], sg.conic[1], sg.conic[1], sg.conic[2]);
    let g_cov2 = -(q * g_conic * q);
    let g_cov_cam = jac.transpose() * g_cov2 * jac;
    let g_jac = 2.0 * g_cov2 * jac * geo.cov_cam;
    let g_cov3 = w.transpose() * g_cov_cam * w;

    // Σ = M Mᵀ with M = R S
    let qn = normalize_quat(g.rotation);
    let r = g.rotation_matrix();
    let scale = g.scale();
    let m = r * Matrix3::from_diagonal(&scale);
    let g_m = 2.0 * g_cov3 * m;
    let mut g_r = g_m;
    for j in 0..3 {
        let mut gs = 0.0;
        for i in 0..3 {
            gs += g_m[(i, j)] * r[(i, j)];
            g_r[(i, j)] *= scale[j];
        }
        out[param::LOG_SCALE.start + j] = gs * scale[j];
    }
    let partials = rotation_partials(qn);
    let g_qn: Vec<f64> = partials.iter().map(|d| g_r.component_mul(d).sum()).collect();
    let norm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = (0..4).map(|k| qn[k] * g_qn[k]).sum();
    for k in 0..4 {
        out[param::ROTATION.start + k] = (g_qn[k] - qn[k] * dot) / norm;
    }

    // mean: through the projection and through the Jacobian
    let (x, y, z) = (geo.p_cam.x, geo.p_cam.y, geo.p_cam.z);
    let (fx, fy) = (camera.intrinsics.fx, camera.intrinsics.fy);
    let mut g_p = jac.transpose() * Vector2::new(sg.mean[0], sg.mean[1]);
    g_p.x += g_jac[(0, 2)] * (-fx / (z * z));
    g_p.y += g_jac[(1, 2)] * (-fy / (z * z));
    g_p.z += g_jac[(0, 0)] * (-fx / (z * z))
        + g_jac[(0, 2)] * (2.0 * fx * x / (z * z * z))
        + g_jac[(1, 1)] * (-fy / (z * z))
        + g_jac[(1, 2)] * (2.0 * fy * y / (z * z * z));
    let g_world: Vector3<f64> = w.transpose() * g_p;
    out[param::POSITION].copy_from_slice(g_world.as_slice());

    let sig = g.opacity();
    out[param::OPACITY.start] = sg.opacity * opacity_scale * sig * (1.0 - sig);
    out[param::COLOR].copy_from_slice(&sg.color);
    out
}
