//! Front-to-back alpha compositing of projected Gaussians.
//!
//! For each pixel, splats are visited nearest first and
//!
//! ```text
//! a_i = min(opacity_i * exp(-0.5 δᵀ Σ⁻¹ δ), 0.99)
//! w_i = a_i * T_i,    T_{i+1} = T_i (1 - a_i),    C = Σ w_i c_i
//! ```
//!
//! until the transmittance drops below [`TRANSMITTANCE_MIN`]. The fast path
//! bins splats into 16×16 tiles; [`naive::render_naive`] walks every splat
//! at every pixel and serves as its oracle.

pub mod naive;
mod project;
mod tiles;

pub use project::{project, PixelBox, Projected2DGaussian, EXTENT_SIGMAS, GUARD_BAND, LOW_PASS};
pub(crate) use project::{geometry, project_filtered};
pub(crate) use tiles::{splat_alpha, ForwardCache, TileGrid};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;
use crate::image::{Image, Map};

pub const ALPHA_MAX: f64 = 0.99;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;
pub const DEFAULT_VIS_EPSILON: f64 = 1e-4;

/// How strongly one Gaussian showed up in a render.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Contribution {
    pub max_weight: f64,
    /// Pixels where its blend weight exceeded the visibility epsilon.
    pub pixel_count: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: Image,
    pub depth_map: Map,
    pub transmittance: Map,
    /// Indexed like the input Gaussian slice.
    pub contributions: Vec<Contribution>,
    /// Splats dropped because their projected covariance was not invertible.
    pub singular_skipped: usize,
}

impl RenderOutput {
    /// Indices of Gaussians whose peak blend weight exceeds `epsilon`.
    pub fn visible(&self, epsilon: f64) -> Vec<usize> {
        self.contributions
            .iter()
            .enumerate()
            .filter(|(_, c)| c.max_weight > epsilon)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RenderOptions<'a> {
    /// `false` drops the Gaussian from this render.
    pub mask: Option<&'a [bool]>,
    /// Per-Gaussian multiplier on activated opacity.
    pub opacity_scale: Option<&'a [f64]>,
    pub vis_epsilon: f64,
}

impl Default for RenderOptions<'_> {
    fn default() -> Self {
        Self {
            mask: None,
            opacity_scale: None,
            vis_epsilon: DEFAULT_VIS_EPSILON,
        }
    }
}

impl<'a> RenderOptions<'a> {
    pub fn masked(mask: Option<&'a [bool]>) -> Self {
        Self {
            mask,
            ..Default::default()
        }
    }

    pub(crate) fn check(&self, n: usize) -> Result<()> {
        if let Some(m) = self.mask {
            if m.len() != n {
                return Err(Error::ShapeMismatch(format!("mask has {} entries for {n} gaussians", m.len())));
            }
        }
        if let Some(s) = self.opacity_scale {
            if s.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "opacity scale has {} entries for {n} gaussians",
                    s.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn render(gaussians: &[GaussianPrimitive], camera: &Camera, mask: Option<&[bool]>) -> Result<RenderOutput> {
    render_with(gaussians, camera, &RenderOptions::masked(mask))
}

pub fn render_with(gaussians: &[GaussianPrimitive], camera: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
    Ok(render_cached(gaussians, camera, opts)?.0)
}

pub(crate) fn render_cached(
    gaussians: &[GaussianPrimitive],
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<(RenderOutput, ForwardCache)> {
    opts.check(gaussians.len())?;
    let (splats, singular) = project_filtered(gaussians, camera, opts.mask, opts.opacity_scale);
    let grid = TileGrid::build(&splats, camera.width, camera.height);
    Ok(tiles::rasterize(splats, grid, gaussians.len(), camera, opts.vis_epsilon, singular))
}

/// Median camera-space depth of the Gaussians that survive culling.
pub fn median_scene_depth(gaussians: &[GaussianPrimitive], camera: &Camera) -> Result<f64> {
    let depths: Vec<f64> = project(gaussians, camera).iter().map(|p| p.depth).collect();
    median(depths).ok_or(Error::NoVisibleGaussians)
}

pub(crate) fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}
