//! Dark-channel anomaly scoring and pruning.
//!
//! Per training view: take the per-pixel channel minimum of the clean render,
//! box-average it, flag pixels where both the smoothed and the raw value
//! exceed their thresholds, and add the flagged fraction to the score of
//! every Gaussian visible in that view. Every `t_prune` iterations Gaussians
//! with `score > eta * t_prune` and opacity below `alpha_min` are removed.

use crate::config::CalibConfig;
use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;
use crate::image::{Image, Map};
use crate::trainer::TrainState;

pub fn dark_channel(image: &Image) -> Map {
    Map::from_fn(image.width(), image.height(), |x, y| {
        let p = image.get(x, y);
        p[0].min(p[1]).min(p[2])
    })
}

/// Box mean over a `window × window` neighbourhood, replicating the border.
pub fn local_average(map: &Map, window: usize) -> Result<Map> {
    if window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("window must be odd, got {window}")));
    }
    let (w, h) = (map.width(), map.height());
    if window > w.min(h) {
        return Err(Error::InvalidArgument(format!("window {window} exceeds image size {w}x{h}")));
    }
    let r = (window / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let src = map.as_slice();
    let mut horiz = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dx in -r..=r {
                acc += src[y * w + clamp(x as isize + dx, w)];
            }
            horiz[y * w + x] = acc;
        }
    }
    let norm = 1.0 / (window * window) as f64;
    Ok(Map::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for dy in -r..=r {
            acc += horiz[clamp(y as isize + dy, h) * w + x];
        }
        acc * norm
    }))
}

/// Pixels violating both thresholds, and their fraction of the image.
pub fn anomaly_mask(dark: &Map, dark_smoothed: &Map, tau1: f64, tau2: f64) -> Result<(Vec<bool>, f64)> {
    if dark.width() != dark_smoothed.width() || dark.height() != dark_smoothed.height() {
        return Err(Error::ShapeMismatch("dark channel maps differ in size".into()));
    }
    let mask: Vec<bool> = dark
        .as_slice()
        .iter()
        .zip(dark_smoothed.as_slice())
        .map(|(&d, &s)| s > tau1 && d > tau2)
        .collect();
    let ratio = mask.iter().filter(|b| **b).count() as f64 / mask.len() as f64;
    Ok((mask, ratio))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcpReport {
    pub dark: Map,
    pub dark_smoothed: Map,
    pub bad_mask: Vec<bool>,
    pub violation_ratio: f64,
}

impl DcpReport {
    pub fn compute(image: &Image, cfg: &CalibConfig) -> Result<Self> {
        Self::with_params(image, cfg.tau1, cfg.tau2, cfg.dcp_window)
    }

    pub fn with_params(image: &Image, tau1: f64, tau2: f64, window: usize) -> Result<Self> {
        let dark = dark_channel(image);
        let dark_smoothed = local_average(&dark, window)?;
        let (bad_mask, violation_ratio) = anomaly_mask(&dark, &dark_smoothed, tau1, tau2)?;
        Ok(Self {
            dark,
            dark_smoothed,
            bad_mask,
            violation_ratio,
        })
    }

    pub fn mask_image(&self) -> Image {
        let (w, h) = (self.dark.width(), self.dark.height());
        Image::from_fn(w, h, |x, y| if self.bad_mask[y * w + x] { [1.0; 3] } else { [0.0; 3] })
    }
}

/// Add `ratio` to the score of every listed Gaussian.
pub fn accumulate_scores(gaussians: &mut [GaussianPrimitive], ratio: f64, visible: &[usize]) {
    for &i in visible {
        gaussians[i].dcp_score += ratio;
    }
}

pub fn accumulate(state: &mut TrainState, report: &DcpReport, visible: &[usize]) {
    accumulate_scores(&mut state.gaussians, report.violation_ratio, visible);
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneDecision {
    pub threshold_lambda: f64,
    pub pruned_indices: Vec<usize>,
    pub reset_applied: bool,
    /// Set when the candidates were left in place to avoid emptying the scene.
    pub warning: Option<String>,
}

/// Which Gaussians the pruning rule selects, without touching anything.
pub fn select_for_pruning(gaussians: &[GaussianPrimitive], cfg: &CalibConfig) -> PruneDecision {
    let lambda = cfg.prune_threshold();
    let mut pruned: Vec<usize> = gaussians
        .iter()
        .enumerate()
        .filter(|(_, g)| g.dcp_score > lambda && g.opacity() < cfg.alpha_min)
        .map(|(i, _)| i)
        .collect();
    let mut warning = None;
    if !pruned.is_empty() && pruned.len() == gaussians.len() {
        warning = Some(format!("pruning would remove all {} gaussians; skipped", gaussians.len()));
        log::warn!("{}", warning.as_ref().unwrap());
        pruned.clear();
    }
    PruneDecision {
        threshold_lambda: lambda,
        pruned_indices: pruned,
        reset_applied: cfg.reset_scores_after_prune,
        warning,
    }
}

/// Remove the selected Gaussians (with their optimizer state) and reset
/// the surviving scores when configured to.
pub fn prune(state: &mut TrainState, cfg: &CalibConfig) -> PruneDecision {
    let decision = select_for_pruning(&state.gaussians, cfg);
    let mut keep = vec![true; state.gaussians.len()];
    for &i in &decision.pruned_indices {
        keep[i] = false;
    }
    state.retain(&keep);
    if decision.reset_applied {
        state.gaussians.iter_mut().for_each(|g| g.dcp_score = 0.0);
    }
    decision
}

/// Nearest-rank percentile, `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub tau1: f64,
    pub tau2: f64,
    pub samples: usize,
}

/// Suggest `tau1` as the 95th percentile of the smoothed dark channel over
/// the given renders. `tau2` stays at its configured value, capped by `tau1`.
pub fn calibrate(renders: &[Image], cfg: &CalibConfig) -> Result<Calibration> {
    let mut pool = Vec::new();
    for img in renders {
        let dark = dark_channel(img);
        pool.extend_from_slice(local_average(&dark, cfg.dcp_window)?.as_slice());
    }
    let tau1 = percentile(&pool, 95.0).ok_or_else(|| Error::InvalidArgument("no renders to calibrate on".into()))?;
    Ok(Calibration {
        tau1,
        tau2: cfg.tau2.min(tau1),
        samples: pool.len(),
    })
}
