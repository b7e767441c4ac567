//! Depth-guided dropout.
//!
//! Each visible Gaussian gets a normalized depth `D_i ∈ [0, 1]` and a depth
//! weight; its drop probability is their product. The piecewise weight
//! (three depth bins) is the baseline, the sigmoid weight
//! `W(d) = λ_base + (1 - λ_base) / (1 + exp(κ (d - τ)))` is the continuous
//! variant.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{CalibConfig, TauCenterMode};
use crate::error::{Error, Result};
use crate::rasterizer::{median, Projected2DGaussian};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum DropoutMode {
    Off,
    Ddgs,
    Cdgd,
}

impl fmt::Display for DropoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropoutMode::Off => "off",
            DropoutMode::Ddgs => "ddgs",
            DropoutMode::Cdgd => "cdgd",
        })
    }
}

impl FromStr for DropoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(DropoutMode::Off),
            "ddgs" => Ok(DropoutMode::Ddgs),
            "cdgd" => Ok(DropoutMode::Cdgd),
            other => Err(Error::InvalidArgument(format!("unknown dropout mode `{other}`"))),
        }
    }
}

/// Dropout decision for one training iteration. All vectors are indexed
/// like the Gaussian list; Gaussians culled from the view have importance
/// 0, weight 1, probability 0 and are always kept.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutPlan {
    pub mode: DropoutMode,
    pub depth_importance: Vec<f64>,
    pub weight: Vec<f64>,
    pub probability: Vec<f64>,
    pub mask: Vec<bool>,
    /// `1 / (1 - P_i)` for kept Gaussians when compensation is enabled.
    pub opacity_scale: Option<Vec<f64>>,
    pub rng_seed: u64,
    /// Sigmoid center used by the continuous mode.
    pub tau: Option<f64>,
}

impl DropoutPlan {
    pub fn keep_all(n: usize, seed: u64) -> Self {
        Self {
            mode: DropoutMode::Off,
            depth_importance: vec![0.0; n],
            weight: vec![1.0; n],
            probability: vec![0.0; n],
            mask: vec![true; n],
            opacity_scale: None,
            rng_seed: seed,
            tau: None,
        }
    }

    pub fn dropped_count(&self) -> usize {
        self.mask.iter().filter(|k| !**k).count()
    }
}

/// Min-max normalized depths; all zeros when the range is degenerate.
pub fn depth_importance(depths: &[f64]) -> Vec<f64> {
    let lo = depths.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; depths.len()];
    }
    depths.iter().map(|d| (d - lo) / range).collect()
}

/// Bin factor of the piecewise scheme for one raw depth.
pub fn piecewise_factor(depth: f64, d_near: f64, d_middle: f64, lambda_middle: f64, lambda_far: f64) -> f64 {
    if depth <= d_near {
        1.0
    } else if depth <= d_middle {
        lambda_middle
    } else {
        lambda_far
    }
}

pub fn piecewise_probability(
    importance: &[f64],
    depths: &[f64],
    d_near: f64,
    d_middle: f64,
    lambda_middle: f64,
    lambda_far: f64,
) -> Result<Vec<f64>> {
    if !(d_near > 0.0 && d_near < d_middle) {
        return Err(Error::InvalidArgument(format!(
            "depth thresholds must satisfy 0 < d_near < d_middle, got {d_near} and {d_middle}"
        )));
    }
    if importance.len() != depths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} importances for {} depths",
            importance.len(),
            depths.len()
        )));
    }
    Ok(importance
        .iter()
        .zip(depths)
        .map(|(d_i, &z)| d_i * piecewise_factor(z, d_near, d_middle, lambda_middle, lambda_far))
        .collect())
}

pub fn continuous_weight(d: f64, lambda_base: f64, kappa: f64, tau: f64) -> f64 {
    let e = (kappa * (d - tau)).exp();
    if e.is_infinite() {
        return lambda_base;
    }
    lambda_base + (1.0 - lambda_base) / (1.0 + e)
}

/// Resolve the sigmoid center for one view from its projected depths.
pub fn resolve_tau(projected: &[Projected2DGaussian], cfg: &CalibConfig) -> Result<f64> {
    match cfg.tau_center_mode {
        TauCenterMode::Fixed => Ok(cfg.tau_fixed),
        TauCenterMode::MedianDepth => median(projected.iter().map(|p| p.depth).collect()).ok_or(Error::NoVisibleGaussians),
    }
}

/// Deterministic per-iteration seed.
pub fn iteration_seed(seed: u64, iteration: u64) -> u64 {
    let mut z = seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn make_plan(
    projected: &[Projected2DGaussian],
    n_total: usize,
    cfg: &CalibConfig,
    mode: DropoutMode,
    seed: u64,
) -> Result<DropoutPlan> {
    let tau = match mode {
        DropoutMode::Cdgd => Some(resolve_tau(projected, cfg)?),
        _ => None,
    };
    make_plan_with_tau(projected, n_total, cfg, mode, seed, tau)
}

/// Like [`make_plan`] with the sigmoid center supplied by the caller.
pub fn make_plan_with_tau(
    projected: &[Projected2DGaussian],
    n_total: usize,
    cfg: &CalibConfig,
    mode: DropoutMode,
    seed: u64,
    tau: Option<f64>,
) -> Result<DropoutPlan> {
    let mut plan = DropoutPlan::keep_all(n_total, seed);
    plan.mode = mode;
    if mode == DropoutMode::Off {
        return Ok(plan);
    }
    if let Some(p) = projected.iter().find(|p| p.source_index >= n_total) {
        return Err(Error::ShapeMismatch(format!("source index {} out of {n_total}", p.source_index)));
    }
    let depths: Vec<f64> = projected.iter().map(|p| p.depth).collect();
    let mut importance = depth_importance(&depths);
    if cfg.invert_importance {
        importance.iter_mut().for_each(|d| *d = 1.0 - *d);
    }
    let weights: Vec<f64> = match mode {
        DropoutMode::Ddgs => {
            piecewise_probability(&vec![1.0; depths.len()], &depths, cfg.d_near, cfg.d_middle, cfg.lambda_middle, cfg.lambda_far)?
        }
        DropoutMode::Cdgd => {
            let tau = tau.ok_or_else(|| Error::InvalidArgument("continuous dropout needs a sigmoid center".into()))?;
            plan.tau = Some(tau);
            depths.iter().map(|&d| continuous_weight(d, cfg.lambda_base, cfg.kappa, tau)).collect()
        }
        DropoutMode::Off => unreachable!(),
    };
    for (k, p) in projected.iter().enumerate() {
        let i = p.source_index;
        plan.depth_importance[i] = importance[k];
        plan.weight[i] = weights[k];
        plan.probability[i] = (importance[k] * weights[k]).clamp(0.0, 1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (keep, &p) in plan.mask.iter_mut().zip(&plan.probability) {
        let u: f64 = rng.random();
        *keep = u >= p;
    }
    if cfg.dropout_rescale {
        plan.opacity_scale = Some(
            plan.probability
                .iter()
                .map(|&p| if p < 1.0 { 1.0 / (1.0 - p) } else { 1.0 })
                .collect(),
        );
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasterizer::PixelBox;
    use proptest::prelude::*;

    fn splat(index: usize, depth: f64) -> Projected2DGaussian {
        Projected2DGaussian {
            mean2d: [0.0, 0.0],
            cov2d: [1.0, 0.0, 1.0],
            conic: [1.0, 0.0, 1.0],
            depth,
            source_index: index,
            opacity: 0.5,
            color: [0.0; 3],
            bbox: PixelBox { x0: 0, y0: 0, x1: 0, y1: 0 },
        }
    }

    #[test]
    fn importance_min_max() {
        assert_eq!(depth_importance(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(depth_importance(&[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn piecewise_branches() {
        let p = piecewise_probability(&[0.8, 0.8, 0.8], &[3.0, 3.0 + 1e-9, 10.0], 3.0, 4.5, 0.5, 0.25).unwrap();
        assert_eq!(p[0], 0.8);
        assert_eq!(p[1], 0.4);
        assert_eq!(p[2], 0.2);
        assert!(piecewise_probability(&[0.1], &[1.0], 4.0, 3.0, 0.5, 0.25).is_err());
    }

    #[test]
    fn weight_midpoint_and_asymptotes() {
        assert!((continuous_weight(1.0, 0.3, 10.0, 1.0) - 0.65).abs() < 1e-15);
        assert_eq!(continuous_weight(1e6, 0.3, 10.0, 1.0), 0.3);
        assert_eq!(continuous_weight(-1e6, 0.3, 10.0, 1.0), 1.0);
        // 40-digit evaluation of 0.3 + 0.7 / (1 + e²)
        let reference = 0.383_442_045_415_482_3;
        assert!((continuous_weight(1.2, 0.3, 10.0, 1.0) - reference).abs() < 1e-15);
    }

    #[test]
    fn off_mode_keeps_everything() {
        let proj: Vec<_> = (0..5).map(|i| splat(i, 1.0 + i as f64)).collect();
        let plan = make_plan(&proj, 5, &CalibConfig::default(), DropoutMode::Off, 3).unwrap();
        assert!(plan.mask.iter().all(|k| *k));
        assert!(plan.probability.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn plan_is_deterministic_and_culled_are_kept() {
        let proj: Vec<_> = (0..200).filter(|i| i % 7 != 0).map(|i| splat(i, 1.0 + (i as f64 * 0.37) % 5.0)).collect();
        let cfg = CalibConfig::default();
        let a = make_plan(&proj, 200, &cfg, DropoutMode::Cdgd, 11).unwrap();
        let b = make_plan(&proj, 200, &cfg, DropoutMode::Cdgd, 11).unwrap();
        assert_eq!(a, b);
        for i in (0..200).step_by(7) {
            assert_eq!(a.probability[i], 0.0);
            assert!(a.mask[i]);
        }
        for p in &proj {
            let i = p.source_index;
            assert_eq!(a.probability[i], a.depth_importance[i] * a.weight[i]);
        }
        assert!(a.dropped_count() > 0);
    }

    #[test]
    fn rescale_compensates_kept() {
        let proj: Vec<_> = (0..10).map(|i| splat(i, 1.0 + i as f64)).collect();
        let cfg = CalibConfig {
            dropout_rescale: true,
            ..CalibConfig::default()
        };
        let plan = make_plan(&proj, 10, &cfg, DropoutMode::Cdgd, 1).unwrap();
        let s = plan.opacity_scale.unwrap();
        for i in 0..10 {
            assert!((s[i] * (1.0 - plan.probability[i]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_drop_rate() {
        // D = 1 for all but the nearest splat; W = 0.3 everywhere via the far bin.
        let n = 100_000;
        let mut proj = vec![splat(0, 1.0)];
        proj.extend((1..n).map(|i| splat(i, 10.0)));
        let cfg = CalibConfig {
            lambda_far: 0.3,
            ..CalibConfig::default()
        };
        let plan = make_plan(&proj, n, &cfg, DropoutMode::Ddgs, 5).unwrap();
        let rate = plan.dropped_count() as f64 / (n - 1) as f64;
        assert!((rate - 0.3).abs() < 0.01, "{rate}");
    }

    proptest! {
        #[test]
        fn weight_bounded_and_decreasing(lb in 0.01f64..1.0, kappa in 0.1f64..50.0, tau in -5.0f64..5.0, d in -10.0f64..10.0, step in 1e-6f64..1.0) {
            let a = continuous_weight(d, lb, kappa, tau);
            let b = continuous_weight(d + step, lb, kappa, tau);
            prop_assert!(a >= lb && a <= 1.0);
            prop_assert!(b <= a);
            prop_assert!(a - b <= (1.0 - lb) * kappa * step / 4.0 + 1e-12);
        }

        #[test]
        fn importance_monotone_in_unit_interval(depths in prop::collection::vec(0.01f64..100.0, 1..50)) {
            let d = depth_importance(&depths);
            for i in 0..depths.len() {
                prop_assert!((0.0..=1.0).contains(&d[i]));
                for j in 0..depths.len() {
                    if depths[i] < depths[j] {
                        prop_assert!(d[i] <= d[j]);
                    }
                }
            }
        }

        #[test]
        fn probabilities_in_unit_interval(depths in prop::collection::vec(0.1f64..20.0, 1..40), seed in any::<u64>(), invert in any::<bool>()) {
            let proj: Vec<_> = depths.iter().enumerate().map(|(i, &d)| splat(i, d)).collect();
            let cfg = CalibConfig { invert_importance: invert, ..CalibConfig::default() };
            for mode in [DropoutMode::Off, DropoutMode::Ddgs, DropoutMode::Cdgd] {
                let plan = make_plan(&proj, depths.len(), &cfg, mode, seed).unwrap();
                prop_assert!(plan.probability.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }
}
