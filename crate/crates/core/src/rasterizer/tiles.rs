use rayon::prelude::*;

use super::{Contribution, Projected2DGaussian, RenderOutput, ALPHA_MAX, TILE_SIZE, TRANSMITTANCE_MIN};
use crate::camera::Camera;
use crate::image::{Image, Map};

/// Per-tile lists of splat indices, each list in depth order.
pub(crate) struct TileGrid {
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn build(splats: &[Projected2DGaussian], width: usize, height: usize) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for (k, s) in splats.iter().enumerate() {
            let b = s.bbox;
            if b.is_empty() {
                continue;
            }
            let (tx0, tx1) = (b.x0 as usize / TILE_SIZE, b.x1 as usize / TILE_SIZE);
            let (ty0, ty1) = (b.y0 as usize / TILE_SIZE, b.y1 as usize / TILE_SIZE);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    lists[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        Self { tiles_x, lists }
    }

    pub fn tile_pixels(&self, tile: usize, width: usize, height: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(width);
        let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(height);
        (xs, ys)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PixelResult {
    pub color: [f64; 3],
    pub depth_weighted: f64,
    pub weight_sum: f64,
    pub transmittance: f64,
}

/// Blend value of splat `s` at pixel `(x, y)`, before the transmittance factor.
#[inline]
pub(crate) fn splat_alpha(s: &Projected2DGaussian, x: f64, y: f64) -> (f64, f64) {
    let dx = x - s.mean2d[0];
    let dy = y - s.mean2d[1];
    let [a, b, c] = s.conic;
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    let g = power.exp();
    ((s.opacity * g).min(ALPHA_MAX), g)
}

/// Composite one pixel over splats in the given order. `on_weight` sees the
/// position in `order` and the blend weight of every splat that was blended.
#[inline]
pub(crate) fn composite_pixel(
    x: usize,
    y: usize,
    splats: &[Projected2DGaussian],
    order: &[u32],
    mut on_weight: impl FnMut(usize, f64),
) -> PixelResult {
    let (xi, yi) = (x as i32, y as i32);
    let (xf, yf) = (x as f64, y as f64);
    let mut t = 1.0;
    let mut color = [0.0; 3];
    let mut depth_weighted = 0.0;
    let mut weight_sum = 0.0;
    for (pos, &k) in order.iter().enumerate() {
        if t < TRANSMITTANCE_MIN {
            break;
        }
        let s = &splats[k as usize];
        if !s.bbox.contains(xi, yi) {
            continue;
        }
        let (alpha, _) = splat_alpha(s, xf, yf);
        let w = alpha * t;
        color[0] += w * s.color[0];
        color[1] += w * s.color[1];
        color[2] += w * s.color[2];
        depth_weighted += w * s.depth;
        weight_sum += w;
        t *= 1.0 - alpha;
        on_weight(pos, w);
    }
    PixelResult {
        color,
        depth_weighted,
        weight_sum,
        transmittance: t,
    }
}

/// What the backward pass needs from the forward pass.
pub(crate) struct ForwardCache {
    pub splats: Vec<Projected2DGaussian>,
    pub grid: TileGrid,
}

struct TileResult {
    pixels: Vec<(usize, usize, PixelResult)>,
    contrib: Vec<Contribution>,
}

pub(crate) fn rasterize(
    splats: Vec<Projected2DGaussian>,
    grid: TileGrid,
    n_gaussians: usize,
    camera: &Camera,
    vis_epsilon: f64,
    singular_skipped: usize,
) -> (RenderOutput, ForwardCache) {
    let (width, height) = (camera.width, camera.height);
    let tiles: Vec<TileResult> = (0..grid.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &grid.lists[tile];
            let (xs, ys) = grid.tile_pixels(tile, width, height);
            let mut contrib = vec![Contribution::default(); list.len()];
            let mut pixels = Vec::with_capacity(xs.len() * ys.len());
            for y in ys {
                for x in xs.clone() {
                    let px = composite_pixel(x, y, &splats, list, |pos, w| {
                        let c = &mut contrib[pos];
                        c.max_weight = c.max_weight.max(w);
                        if w > vis_epsilon {
                            c.pixel_count += 1;
                        }
                    });
                    pixels.push((x, y, px));
                }
            }
            TileResult { pixels, contrib }
        })
        .collect();

    let mut color = Image::new(width, height);
    let mut depth_map = Map::new(width, height);
    let mut transmittance = Map::new(width, height);
    let mut contributions = vec![Contribution::default(); n_gaussians];
    for (tile, result) in tiles.into_iter().enumerate() {
        for (x, y, px) in result.pixels {
            color.set(x, y, px.color);
            let d = if px.weight_sum > 0.0 {
                px.depth_weighted / px.weight_sum
            } else {
                0.0
            };
            depth_map.set(x, y, d);
            transmittance.set(x, y, px.transmittance);
        }
        for (pos, c) in result.contrib.into_iter().enumerate() {
            let g = &mut contributions[splats[grid.lists[tile][pos] as usize].source_index];
            g.max_weight = g.max_weight.max(c.max_weight);
            g.pixel_count += c.pixel_count;
        }
    }

    (
        RenderOutput {
            color,
            depth_map,
            transmittance,
            contributions,
            singular_skipped,
        },
        ForwardCache { splats, grid },
    )
}
