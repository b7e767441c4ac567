//! PSNR and SSIM.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), `C1 = 0.01²`,
//! `C2 = 0.03²`, valid-region filtering (no padding), computed per channel
//! and averaged. The photometric loss shares these filters.

use crate::error::{Error, Result};
use crate::image::Image;

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.as_slice().len() as f64;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.as_slice().len() as f64;
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Valid-region separable filtering of a `width × height` plane.
pub(crate) fn filter_valid(src: &[f64], width: usize, height: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wv = width + 1 - SSIM_WINDOW;
    let hv = height + 1 - SSIM_WINDOW;
    let mut horiz = vec![0.0; wv * height];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..wv {
            horiz[y * wv + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; wv * hv];
    for y in 0..hv {
        for x in 0..wv {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * horiz[(y + j) * wv + x];
            }
            out[y * wv + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads a valid-region map back over the
/// full plane.
pub(crate) fn filter_valid_adjoint(grad: &[f64], width: usize, height: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wv = width + 1 - SSIM_WINDOW;
    let hv = height + 1 - SSIM_WINDOW;
    let mut horiz = vec![0.0; wv * height];
    for y in 0..hv {
        for x in 0..wv {
            let g = grad[y * wv + x];
            for (j, kj) in k.iter().enumerate() {
                horiz[(y + j) * wv + x] += kj * g;
            }
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..wv {
            let g = horiz[y * wv + x];
            for (i, ki) in k.iter().enumerate() {
                out[y * width + x + i] += ki * g;
            }
        }
    }
    out
}

/// Local statistics of one channel pair over the valid region.
pub(crate) struct SsimStats {
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub var_x: Vec<f64>,
    pub var_y: Vec<f64>,
    pub cov_xy: Vec<f64>,
}

impl SsimStats {
    pub fn compute(x: &[f64], y: &[f64], width: usize, height: usize, k: &[f64; SSIM_WINDOW]) -> Self {
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let mu_x = filter_valid(x, width, height, k);
        let mu_y = filter_valid(y, width, height, k);
        let mut var_x = filter_valid(&xx, width, height, k);
        let mut var_y = filter_valid(&yy, width, height, k);
        let mut cov_xy = filter_valid(&xy, width, height, k);
        for i in 0..mu_x.len() {
            var_x[i] -= mu_x[i] * mu_x[i];
            var_y[i] -= mu_y[i] * mu_y[i];
            cov_xy[i] -= mu_x[i] * mu_y[i];
        }
        Self {
            mu_x,
            mu_y,
            var_x,
            var_y,
            cov_xy,
        }
    }

    pub fn ssim_at(&self, i: usize) -> f64 {
        let (mx, my) = (self.mu_x[i], self.mu_y[i]);
        ((2.0 * mx * my + SSIM_C1) * (2.0 * self.cov_xy[i] + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (self.var_x[i] + self.var_y[i] + SSIM_C2))
    }
}

pub(crate) fn check_ssim_size(img: &Image) -> Result<()> {
    if img.width() < SSIM_WINDOW || img.height() < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: SSIM_WINDOW,
        });
    }
    Ok(())
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    check_ssim_size(a)?;
    let k = gaussian_window();
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let x = a.channel(c);
        let y = b.channel(c);
        let stats = SsimStats::compute(x.as_slice(), y.as_slice(), w, h, &k);
        for i in 0..stats.mu_x.len() {
            total += stats.ssim_at(i);
        }
        count += stats.mu_x.len();
    }
    Ok(total / count as f64)
}

/// One row per view plus a trailing `mean` row.
pub fn metric_rows(pairs: &[(String, &Image, &Image)]) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::with_capacity(pairs.len() + 1);
    for (view, render, gt) in pairs {
        rows.push(MetricRow {
            view: view.clone(),
            psnr: psnr(render, gt)?,
            ssim: ssim(render, gt)?,
        });
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        rows.push(MetricRow {
            view: "mean".into(),
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        });
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("view,psnr,ssim\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.8}\n", r.view, r.psnr, r.ssim));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    /// Windowed SSIM evaluated directly from its definition.
    fn ssim_bruteforce(a: &Image, b: &Image) -> f64 {
        let k1 = gaussian_window();
        let (w, h) = (a.width(), a.height());
        let mut total = 0.0;
        let mut n = 0;
        for c in 0..3 {
            for oy in 0..=h - SSIM_WINDOW {
                for ox in 0..=w - SSIM_WINDOW {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for j in 0..SSIM_WINDOW {
                        for i in 0..SSIM_WINDOW {
                            let wt = k1[i] * k1[j];
                            let x = a.get(ox + i, oy + j)[c];
                            let y = b.get(ox + i, oy + j)[c];
                            mx += wt * x;
                            my += wt * y;
                            sxx += wt * x * x;
                            syy += wt * y * y;
                            sxy += wt * x * y;
                        }
                    }
                    let vx = sxx - mx * mx;
                    let vy = syy - my * my;
                    let cxy = sxy - mx * my;
                    total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                    n += 1;
                }
            }
        }
        total / n as f64
    }

    #[test]
    fn psnr_identical_is_capped() {
        let a = random_image(12, 12, 1);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_uniform_offset() {
        let a = Image::filled(16, 16, [0.3, 0.5, 0.7]);
        let b = Image::filled(16, 16, [0.4, 0.6, 0.8]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_direct_formula() {
        let a = random_image(20, 17, 2);
        let b = random_image(20, 17, 3);
        let mut se = 0.0;
        for y in 0..17 {
            for x in 0..20 {
                for c in 0..3 {
                    se += (a.get(x, y)[c] - b.get(x, y)[c]).powi(2);
                }
            }
        }
        let expect = 10.0 * (1.0 / (se / (20.0 * 17.0 * 3.0))).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let a = random_image(24, 24, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..24 * 24 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let data = a.as_slice().iter().zip(&noise).map(|(v, n)| v + amp * n).collect();
            let b = Image::from_vec(24, 24, data).unwrap();
            let p = psnr(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = random_image(16, 16, 6);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map_pixels(|p| [1.0 - p[0], 1.0 - p[1], 1.0 - p[2]]);
        assert!(ssim(&a, &inv).unwrap() < 1.0);
    }

    #[test]
    fn ssim_matches_bruteforce_window() {
        let a = random_image(32, 32, 7);
        let b = a.map_pixels(|p| [0.8 * p[0] + 0.1, p[1] * p[1], 0.5]);
        let fast = ssim(&a, &b).unwrap();
        let slow = ssim_bruteforce(&a, &b);
        assert!((fast - slow).abs() < 1e-7, "{fast} vs {slow}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = random_image(20, 14, 8);
        let b = random_image(20, 14, 9);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::new(10, 30);
        assert!(matches!(ssim(&a, &a), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn adjoint_identity() {
        // <F x, y> == <x, Fᵀ y>
        let (w, h) = (19, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
        let k = gaussian_window();
        let fx = filter_valid(&x, w, h, &k);
        let y: Vec<f64> = (0..fx.len()).map(|_| rng.random()).collect();
        let fty = filter_valid_adjoint(&y, w, h, &k);
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&fty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn mean_row_is_arithmetic_mean() {
        let a = random_image(16, 16, 11);
        let b = random_image(16, 16, 12);
        let c = a.map_pixels(|p| [p[0] * 0.9, p[1], p[2]]);
        let rows = metric_rows(&[("0".into(), &a, &b), ("1".into(), &a, &c)]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!((rows[2].psnr - 0.5 * (rows[0].psnr + rows[1].psnr)).abs() < 1e-12);
        assert!((rows[2].ssim - 0.5 * (rows[0].ssim + rows[1].ssim)).abs() < 1e-12);
    }
}
