//! Splitting a render into a floater layer and the surface behind it.
//!
//! With the flagged splats `F` in front of everything else on a ray,
//!
//! ```text
//! C = C_F + T_F · C_surf
//! C_F = Σ_{i∈F} c_i a_i Π_{j<i, j∈F} (1 - a_j),   T_F = Π_{j∈F} (1 - a_j)
//! ```
//!
//! and when floater colors hover around a common `A`, `C_F ≈ A (1 - T_F)`,
//! the same shape as a haze model.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;
use crate::image::{Image, Map};
use crate::rasterizer::{render_cached, splat_alpha, RenderOptions, TRANSMITTANCE_MIN};

#[derive(Clone, Debug, PartialEq)]
pub struct FloaterDecomposition {
    pub c_f: Image,
    pub t_f: Map,
    pub c_surf: Image,
    /// Blend-weight-weighted mean floater color.
    pub a_est: [f64; 3],
    /// The full render the decomposition was taken from.
    pub color: Image,
}

impl FloaterDecomposition {
    /// `C_F + T_F · C_surf`.
    pub fn reconstruct(&self) -> Image {
        Image::from_fn(self.c_f.width(), self.c_f.height(), |x, y| {
            let f = self.c_f.get(x, y);
            let s = self.c_surf.get(x, y);
            let t = self.t_f.get(x, y);
            [f[0] + t * s[0], f[1] + t * s[1], f[2] + t * s[2]]
        })
    }
}

/// Walks each ray once in the full render's order and termination, routing
/// every blended splat into the floater or surface layer by its flag.
pub fn decompose(gaussians: &[GaussianPrimitive], camera: &Camera, floater_flags: &[bool]) -> Result<FloaterDecomposition> {
    if floater_flags.len() != gaussians.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} floater flags for {} gaussians",
            floater_flags.len(),
            gaussians.len()
        )));
    }
    let (render, cache) = render_cached(gaussians, camera, &RenderOptions::default())?;
    let (w, h) = (camera.width, camera.height);
    let grid = &cache.grid;
    let splats = &cache.splats;

    struct Px {
        x: usize,
        y: usize,
        c_f: [f64; 3],
        t_f: f64,
        c_s: [f64; 3],
    }
    let tiles: Vec<(Vec<Px>, [f64; 4])> = (0..grid.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &grid.lists[tile];
            let (xs, ys) = grid.tile_pixels(tile, w, h);
            let mut out = Vec::new();
            let mut a_acc = [0.0; 4];
            for y in ys {
                for x in xs.clone() {
                    let mut p = Px {
                        x,
                        y,
                        c_f: [0.0; 3],
                        t_f: 1.0,
                        c_s: [0.0; 3],
                    };
                    let mut t_s = 1.0;
                    for &k in list {
                        if p.t_f * t_s < TRANSMITTANCE_MIN {
                            break;
                        }
                        let s = &splats[k as usize];
                        if !s.bbox.contains(x as i32, y as i32) {
                            continue;
                        }
                        let (alpha, _) = splat_alpha(s, x as f64, y as f64);
                        if floater_flags[s.source_index] {
                            let wgt = alpha * p.t_f;
                            for c in 0..3 {
                                p.c_f[c] += wgt * s.color[c];
                                a_acc[c] += wgt * s.color[c];
                            }
                            a_acc[3] += wgt;
                            p.t_f *= 1.0 - alpha;
                        } else {
                            let wgt = alpha * t_s;
                            for c in 0..3 {
                                p.c_s[c] += wgt * s.color[c];
                            }
                            t_s *= 1.0 - alpha;
                        }
                    }
                    out.push(p);
                }
            }
            (out, a_acc)
        })
        .collect();

    let mut c_f = Image::new(w, h);
    let mut c_surf = Image::new(w, h);
    let mut t_f = Map::filled(w, h, 1.0);
    let mut acc = [0.0; 4];
    for (pixels, a) in tiles {
        for p in pixels {
            c_f.set(p.x, p.y, p.c_f);
            c_surf.set(p.x, p.y, p.c_s);
            t_f.set(p.x, p.y, p.t_f);
        }
        for k in 0..4 {
            acc[k] += a[k];
        }
    }
    let a_est = if acc[3] > 0.0 {
        [acc[0] / acc[3], acc[1] / acc[3], acc[2] / acc[3]]
    } else {
        [0.0; 3]
    };
    Ok(FloaterDecomposition {
        c_f,
        t_f,
        c_surf,
        a_est,
        color: render.color,
    })
}

/// Mean over floater-touched pixels of `‖C_F - A (1 - T_F)‖ / max(1 - T_F, 1e-3)`.
pub fn haze_approx_error(d: &FloaterDecomposition) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for y in 0..d.t_f.height() {
        for x in 0..d.t_f.width() {
            let t = d.t_f.get(x, y);
            if t >= 1.0 {
                continue;
            }
            let cf = d.c_f.get(x, y);
            let err: f64 = (0..3).map(|c| (cf[c] - d.a_est[c] * (1.0 - t)).powi(2)).sum::<f64>().sqrt();
            total += err / (1.0 - t).max(1e-3);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoFloaterCoverage);
    }
    Ok(total / n as f64)
}
