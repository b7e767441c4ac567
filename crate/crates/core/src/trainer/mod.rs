//! The optimization loop.
//!
//! Each iteration trains on one view (round-robin): optional depth-guided
//! dropout mask, masked forward and backward, dark-channel monitoring of the
//! clean render once past `t_start`, then the Adam step. Densification runs on
//! its own schedule; DCP pruning runs every `t_prune` iterations past
//! `t_start` when the ablation enables it.

mod densify;
mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use densify::{densify, DensifyOutcome, SPLIT_SCALE_DIVISOR};
pub use report::{events_to_text, reconcile_count, Event, RemovalSummary, ReportRow, TrainReport};

use crate::camera::Camera;
use crate::cdgd::{iteration_seed, make_plan_with_tau, resolve_tau, DropoutMode, DropoutPlan};
use crate::config::{CalibConfig, TauCenterMode};
use crate::dcp::{self, DcpReport};
use crate::diff::{backward_with, GaussianGradients, LearningRates, OptimizerState};
use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;
use crate::io;
use crate::metrics::{metric_rows, rows_to_csv, MetricRow};
use crate::rasterizer::{median, project, render, render_with, RenderOptions};
use crate::scene::{Scene, View, GAUSSIANS_FILE};

pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const REPORT_FILE: &str = "report.csv";
pub const EVENTS_FILE: &str = "events.log";
pub const VIOLATION_FILE: &str = "violation.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    Baseline,
    Ddgs,
    Cdgd,
    DcpGp,
    CdgdDcpGp,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Baseline,
        Ablation::Ddgs,
        Ablation::Cdgd,
        Ablation::DcpGp,
        Ablation::CdgdDcpGp,
    ];

    pub fn dropout(self) -> DropoutMode {
        match self {
            Ablation::Baseline | Ablation::DcpGp => DropoutMode::Off,
            Ablation::Ddgs => DropoutMode::Ddgs,
            Ablation::Cdgd | Ablation::CdgdDcpGp => DropoutMode::Cdgd,
        }
    }

    pub fn prunes(self) -> bool {
        matches!(self, Ablation::DcpGp | Ablation::CdgdDcpGp)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::Ddgs => "ddgs",
            Ablation::Cdgd => "cdgd",
            Ablation::DcpGp => "dcp_gp",
            Ablation::CdgdDcpGp => "cdgd+dcp_gp",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation `{s}`")))
    }
}

/// Everything the loop mutates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub gaussians: Vec<GaussianPrimitive>,
    pub optimizer: OptimizerState,
    pub iteration: u32,
    /// Summed screen-space gradient norm since the last densification.
    pub grad_accum: Vec<f64>,
    /// Views that contributed to `grad_accum`.
    pub grad_count: Vec<u32>,
    /// Index of the initial Gaussian each one descends from.
    pub origin: Vec<u32>,
    pub events: Vec<Event>,
    pub seed: u64,
}

impl TrainState {
    pub fn new(gaussians: Vec<GaussianPrimitive>, cfg: &CalibConfig, seed: u64) -> Self {
        let n = gaussians.len();
        Self {
            optimizer: OptimizerState::new(n, LearningRates::from_config(cfg)),
            gaussians,
            iteration: 0,
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            origin: (0..n as u32).collect(),
            events: Vec::new(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Keep index-aligned entries where `keep[i]` is true.
    pub fn retain(&mut self, keep: &[bool]) {
        fn filter<T>(v: &mut Vec<T>, keep: &[bool]) {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap());
        }
        filter(&mut self.gaussians, keep);
        filter(&mut self.grad_accum, keep);
        filter(&mut self.grad_count, keep);
        filter(&mut self.origin, keep);
        self.optimizer.retain(keep);
    }

    /// Append a descendant of Gaussian `parent` with fresh optimizer moments.
    pub(crate) fn push_child(&mut self, g: GaussianPrimitive, parent: usize) {
        self.gaussians.push(g);
        self.grad_accum.push(0.0);
        self.grad_count.push(0);
        self.origin.push(self.origin[parent]);
        self.optimizer.push_zeroed();
    }

    pub(crate) fn reset_densify_stats(&mut self) {
        self.grad_accum = vec![0.0; self.gaussians.len()];
        self.grad_count = vec![0; self.gaussians.len()];
    }

    fn accumulate_densify(&mut self, grads: &GaussianGradients) {
        for i in 0..grads.len() {
            if grads.in_view[i] {
                self.grad_accum[i] += grads.grad2d_norm[i];
                self.grad_count[i] += 1;
            }
        }
    }

    pub fn mean_dcp_score(&self) -> f64 {
        if self.gaussians.is_empty() {
            return 0.0;
        }
        self.gaussians.iter().map(|g| g.dcp_score).sum::<f64>() / self.gaussians.len() as f64
    }

    /// Write `gaussians.ply` and `optimizer.bin` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        io::ply::write(&dir.join(GAUSSIANS_FILE), &self.gaussians)?;
        io::write_file(&dir.join(OPTIMIZER_FILE), &self.optimizer.to_bytes())
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Checkpoints go under `<out_dir>/checkpoints/` when set.
    pub out_dir: Option<PathBuf>,
    /// Replaces the dropout mode implied by the ablation.
    pub dropout: Option<DropoutMode>,
}

/// Radius of the training rig around its centroid, padded by 10%.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let centers: Vec<_> = cameras.iter().map(Camera::center).collect();
    let mean = centers.iter().sum::<nalgebra::Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// Clean-render metrics for each view plus a mean row.
pub fn evaluate(gaussians: &[GaussianPrimitive], views: &[View]) -> Result<Vec<MetricRow>> {
    let renders = views
        .iter()
        .map(|v| render(gaussians, &v.camera, None).map(|r| r.color))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = views
        .iter()
        .zip(&renders)
        .map(|(v, r)| (v.camera.id.to_string(), r, &v.image))
        .collect();
    metric_rows(&pairs)
}

fn global_median_depth(gaussians: &[GaussianPrimitive], views: &[View]) -> Result<f64> {
    let depths: Vec<f64> = views.iter().flat_map(|v| project(gaussians, &v.camera).into_iter().map(|p| p.depth)).collect();
    median(depths).ok_or(Error::NoVisibleGaussians)
}

pub fn train(scene: &Scene, cfg: &CalibConfig, ablation: Ablation, seed: u64) -> Result<(TrainState, TrainReport)> {
    train_with(scene, cfg, ablation, seed, &TrainOptions::default())
}

pub fn train_with(
    scene: &Scene,
    cfg: &CalibConfig,
    ablation: Ablation,
    seed: u64,
    opts: &TrainOptions,
) -> Result<(TrainState, TrainReport)> {
    cfg.validate()?;
    scene.validate()?;
    if scene.train.is_empty() {
        return Err(Error::InvalidArgument("scene has no training views".into()));
    }
    let mut state = TrainState::new(scene.gaussians.clone(), cfg, seed);
    let extent = scene_extent(&scene.train_cameras());
    let eval_views = if scene.test.is_empty() { &scene.train } else { &scene.test };
    let mut report = TrainReport::default();
    let (mut loss_sum, mut loss_n) = (0.0, 0u32);
    let (mut vr_sum, mut vr_n) = (0.0, 0u32);
    let (mut pruned_total, mut culled_total) = (0usize, 0usize);

    for it in 1..=cfg.total_iters {
        state.iteration = it;
        let view = &scene.train[(it as usize - 1) % scene.train.len()];
        let n = state.len();
        let mut mode = opts.dropout.unwrap_or(ablation.dropout());
        if cfg.dropout_end_iter > 0 && it > cfg.dropout_end_iter {
            mode = DropoutMode::Off;
        }
        let plan: Option<DropoutPlan> = if mode == DropoutMode::Off {
            None
        } else {
            let projected = project(&state.gaussians, &view.camera);
            let tau = match mode {
                DropoutMode::Cdgd if cfg.global_tau && cfg.tau_center_mode == TauCenterMode::MedianDepth => {
                    Some(global_median_depth(&state.gaussians, &scene.train)?)
                }
                DropoutMode::Cdgd => Some(resolve_tau(&projected, cfg)?),
                _ => None,
            };
            Some(make_plan_with_tau(&projected, n, cfg, mode, iteration_seed(seed, it as u64), tau)?)
        };
        let render_opts = RenderOptions {
            mask: plan.as_ref().map(|p| p.mask.as_slice()),
            opacity_scale: plan.as_ref().and_then(|p| p.opacity_scale.as_deref()),
            vis_epsilon: cfg.vis_epsilon,
        };
        let bo = backward_with(&state.gaussians, &view.camera, &view.image, &render_opts, cfg.lambda1)?;
        report.singular_skipped += bo.render.singular_skipped as u64;
        loss_sum += bo.loss;
        loss_n += 1;

        if it > cfg.t_start {
            let untouched = plan.as_ref().is_none_or(|p| p.dropped_count() == 0 && p.opacity_scale.is_none());
            let clean_owned;
            let clean = if untouched {
                &bo.render
            } else {
                clean_owned = render_with(
                    &state.gaussians,
                    &view.camera,
                    &RenderOptions {
                        vis_epsilon: cfg.vis_epsilon,
                        ..Default::default()
                    },
                )?;
                &clean_owned
            };
            let rep = DcpReport::compute(&clean.color, cfg)?;
            let visible = clean.visible(cfg.vis_epsilon);
            dcp::accumulate(&mut state, &rep, &visible);
            report.violation_trace.push((it, rep.violation_ratio));
            vr_sum += rep.violation_ratio;
            vr_n += 1;
        }

        state.optimizer.step(&bo.grads, &mut state.gaussians)?;
        state.accumulate_densify(&bo.grads);

        if it >= cfg.densify_from && it <= cfg.densify_until && it % cfg.densify_interval == 0 {
            let out = densify(&mut state, cfg, extent);
            state.events.push(Event::Densify {
                iteration: it,
                cloned: out.cloned,
                split: out.split,
                count: state.len() + out.culled_origins.len(),
            });
            culled_total += out.culled_origins.len();
            state.events.push(Event::Cull {
                iteration: it,
                removed_origins: out.culled_origins,
                count: state.len(),
            });
        }

        if ablation.prunes() && it > cfg.t_start && it % cfg.t_prune == 0 {
            let origins = state.origin.clone();
            let decision = dcp::prune(&mut state, cfg);
            let removed: Vec<u32> = decision.pruned_indices.iter().map(|&i| origins[i]).collect();
            pruned_total += removed.len();
            log::info!("iteration {it}: pruned {} gaussians (lambda {})", removed.len(), decision.threshold_lambda);
            state.events.push(Event::Prune {
                iteration: it,
                lambda: decision.threshold_lambda,
                removed_origins: removed,
                reset: decision.reset_applied,
                skipped: decision.warning.is_some(),
                count: state.len(),
            });
        }

        if state.is_empty() {
            return Err(Error::Aborted {
                iteration: it,
                reason: "gaussian count reached zero".into(),
            });
        }

        if it % cfg.log_interval == 0 || it == cfg.total_iters {
            let rows = evaluate(&state.gaussians, eval_views)?;
            let mean = rows.last().expect("at least one evaluation view");
            report.rows.push(ReportRow {
                iteration: it,
                train_loss: loss_sum / loss_n.max(1) as f64,
                test_psnr: mean.psnr,
                test_ssim: mean.ssim,
                gaussian_count: state.len(),
                pruned_total,
                culled_total,
                mean_dcp_score: state.mean_dcp_score(),
                violation_ratio: if vr_n > 0 { vr_sum / vr_n as f64 } else { 0.0 },
            });
            log::info!(
                "iteration {it}: loss {:.5} psnr {:.3} gaussians {}",
                loss_sum / loss_n.max(1) as f64,
                mean.psnr,
                state.len()
            );
            loss_sum = 0.0;
            loss_n = 0;
            vr_sum = 0.0;
            vr_n = 0;
        }

        if let Some(out) = &opts.out_dir {
            if cfg.checkpoint_interval > 0 && it % cfg.checkpoint_interval == 0 {
                state.save_checkpoint(&out.join(CHECKPOINT_DIR).join(format!("iter_{it:06}")))?;
            }
        }
    }
    report.final_metrics = evaluate(&state.gaussians, eval_views)?;
    report.skipped_nonfinite = state.optimizer.skipped_nonfinite;
    Ok((state, report))
}

/// Final model, report, metrics, violation trace and event log.
pub fn write_outputs(dir: &Path, state: &TrainState, report: &TrainReport) -> Result<()> {
    state.save_checkpoint(dir)?;
    io::write_file(&dir.join(REPORT_FILE), report.to_csv().as_bytes())?;
    io::write_file(&dir.join(VIOLATION_FILE), report.violation_csv().as_bytes())?;
    io::write_file(&dir.join(METRICS_FILE), rows_to_csv(&report.final_metrics).as_bytes())?;
    io::write_file(&dir.join(EVENTS_FILE), events_to_text(&state.events).as_bytes())
}
