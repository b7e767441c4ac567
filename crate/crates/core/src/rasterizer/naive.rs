//! Reference renderer: every pixel walks the full depth-sorted splat list
//! and evaluates each Gaussian from its covariance directly. Slow, but it
//! shares nothing with the tiled path beyond projection.

use nalgebra::{Matrix2, Vector2};

use super::project::project_filtered;
use super::{Contribution, RenderOptions, RenderOutput, ALPHA_MAX, TRANSMITTANCE_MIN};
use crate::camera::Camera;
use crate::error::Result;
use crate::gaussian::GaussianPrimitive;
use crate::image::{Image, Map};

pub fn render_naive(gaussians: &[GaussianPrimitive], camera: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
    opts.check(gaussians.len())?;
    let (splats, singular) = project_filtered(gaussians, camera, opts.mask, opts.opacity_scale);
    let inverses: Vec<Matrix2<f64>> = splats
        .iter()
        .map(|s| {
            Matrix2::new(s.cov2d[0], s.cov2d[1], s.cov2d[1], s.cov2d[2])
                .try_inverse()
                .unwrap_or_else(Matrix2::zeros)
        })
        .collect();
    let (w, h) = (camera.width, camera.height);
    let mut color = Image::new(w, h);
    let mut depth_map = Map::new(w, h);
    let mut transmittance = Map::new(w, h);
    let mut contributions = vec![Contribution::default(); gaussians.len()];
    for y in 0..h {
        for x in 0..w {
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            let mut depth = 0.0;
            let mut wsum = 0.0;
            for (s, inv) in splats.iter().zip(&inverses) {
                if t < TRANSMITTANCE_MIN {
                    break;
                }
                if !s.bbox.contains(x as i32, y as i32) {
                    continue;
                }
                let d = Vector2::new(x as f64 - s.mean2d[0], y as f64 - s.mean2d[1]);
                let alpha = (s.opacity * (-0.5 * d.dot(&(inv * d))).exp()).min(ALPHA_MAX);
                let weight = alpha * t;
                for k in 0..3 {
                    rgb[k] += weight * s.color[k];
                }
                depth += weight * s.depth;
                wsum += weight;
                t *= 1.0 - alpha;
                let c = &mut contributions[s.source_index];
                c.max_weight = c.max_weight.max(weight);
                if weight > opts.vis_epsilon {
                    c.pixel_count += 1;
                }
            }
            color.set(x, y, rgb);
            depth_map.set(x, y, if wsum > 0.0 { depth / wsum } else { 0.0 });
            transmittance.set(x, y, t);
        }
    }
    Ok(RenderOutput {
        color,
        depth_map,
        transmittance,
        contributions,
        singular_skipped: singular,
    })
}
