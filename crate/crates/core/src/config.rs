//! Hyperparameters for dropout, dark-channel pruning, optimization and
//! densification, with layered loading (defaults < file < overrides).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauCenterMode {
    /// Median camera-space depth of the Gaussians visible in the view.
    MedianDepth,
    /// Constant `tau_fixed`.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    // continuous depth-guided dropout
    pub lambda_base: f64,
    pub kappa: f64,
    pub tau_center_mode: TauCenterMode,
    pub tau_fixed: f64,
    /// Use one transition center for all views instead of a per-view median.
    pub global_tau: bool,
    /// Map near Gaussians to importance 1 and far ones to 0.
    pub invert_importance: bool,
    pub dropout_rescale: bool,
    /// Last iteration with dropout active; 0 keeps dropout on for the whole run.
    pub dropout_end_iter: u32,

    // piecewise baseline
    pub d_near: f64,
    pub d_middle: f64,
    pub lambda_middle: f64,
    pub lambda_far: f64,

    // dark-channel pruning
    pub tau1: f64,
    pub tau2: f64,
    pub alpha_min: f64,
    pub eta: f64,
    pub t_prune: u32,
    pub t_start: u32,
    pub dcp_window: usize,
    pub vis_epsilon: f64,
    pub reset_scores_after_prune: bool,

    // optimization
    pub total_iters: u32,
    pub lambda1: f64,
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,

    // densification
    pub densify_interval: u32,
    pub densify_from: u32,
    pub densify_until: u32,
    pub densify_grad_threshold: f64,
    /// Split instead of clone above this fraction of the scene extent.
    pub densify_scale_fraction: f64,
    pub cull_opacity: f64,

    // bookkeeping
    pub log_interval: u32,
    pub checkpoint_interval: u32,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            lambda_base: 0.3,
            kappa: 10.0,
            tau_center_mode: TauCenterMode::MedianDepth,
            tau_fixed: 1.0,
            global_tau: false,
            invert_importance: false,
            dropout_rescale: false,
            dropout_end_iter: 0,

            d_near: 3.0,
            d_middle: 4.5,
            lambda_middle: 0.5,
            lambda_far: 0.25,

            tau1: 0.10,
            tau2: 0.05,
            alpha_min: 0.05,
            eta: 0.5,
            t_prune: 1000,
            t_start: 5000,
            dcp_window: 15,
            vis_epsilon: 1e-4,
            reset_scores_after_prune: true,

            total_iters: 10_000,
            lambda1: 0.2,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_color: 2.5e-3,
            lr_opacity: 5e-2,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,

            densify_interval: 500,
            densify_from: 500,
            densify_until: 5000,
            densify_grad_threshold: 2e-4,
            densify_scale_fraction: 0.01,
            cull_opacity: 0.005,

            log_interval: 500,
            checkpoint_interval: 1000,
        }
    }
}

impl CalibConfig {
    /// Pruning score threshold `eta * t_prune`.
    pub fn prune_threshold(&self) -> f64 {
        self.eta * self.t_prune as f64
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &str, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, msg))
            }
        }
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        check(self.lambda_base > 0.0 && self.lambda_base <= 1.0, "lambda_base", "must be in (0, 1]")?;
        check(self.kappa > 0.0 && self.kappa.is_finite(), "kappa", "must be positive")?;
        check(self.tau_fixed.is_finite(), "tau_fixed", "must be finite")?;
        check(self.d_near > 0.0, "d_near", "must be positive")?;
        check(self.d_near < self.d_middle, "d_middle", "must exceed d_near")?;
        check((0.0..=1.0).contains(&self.lambda_middle), "lambda_middle", "must be in [0, 1]")?;
        check((0.0..=1.0).contains(&self.lambda_far), "lambda_far", "must be in [0, 1]")?;
        check(unit_open(self.tau1), "tau1", "must be in (0, 1)")?;
        check(self.tau2 > 0.0 && self.tau2 <= self.tau1, "tau2", "must be in (0, tau1]")?;
        check(unit_open(self.alpha_min), "alpha_min", "must be in (0, 1)")?;
        check(self.eta > 0.0 && self.eta <= 1.0, "eta", "must be in (0, 1]")?;
        check(self.t_prune > 0, "t_prune", "must be positive")?;
        check(self.total_iters > 0, "total_iters", "must be positive")?;
        check(self.t_start < self.total_iters, "t_start", "must be less than total_iters")?;
        check(self.dcp_window % 2 == 1, "dcp_window", "must be odd")?;
        check(self.vis_epsilon > 0.0 && self.vis_epsilon < 1.0, "vis_epsilon", "must be in (0, 1)")?;
        check(self.lambda1 >= 0.0 && self.lambda1.is_finite(), "lambda1", "must be non-negative")?;
        for (field, lr) in [
            ("lr_position_init", self.lr_position_init),
            ("lr_position_final", self.lr_position_final),
            ("lr_color", self.lr_color),
            ("lr_opacity", self.lr_opacity),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
        ] {
            check(lr >= 0.0 && lr.is_finite(), field, "must be non-negative")?;
        }
        check(self.densify_interval > 0, "densify_interval", "must be positive")?;
        check(self.densify_grad_threshold > 0.0, "densify_grad_threshold", "must be positive")?;
        check(self.densify_scale_fraction > 0.0, "densify_scale_fraction", "must be positive")?;
        check((0.0..1.0).contains(&self.cull_opacity), "cull_opacity", "must be in [0, 1)")?;
        check(self.log_interval > 0, "log_interval", "must be positive")?;
        check(self.checkpoint_interval > 0, "checkpoint_interval", "must be positive")?;
        Ok(())
    }

    /// Build a config from `key = value` text layered over `self`.
    pub fn merged_with_text(&self, text: &str, source: &str) -> Result<Self> {
        let layer: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::parse(source, 0, e.to_string()))?;
        self.merged(layer)
    }

    /// Apply `key=value` overrides. Values parse as TOML scalars; bare words
    /// are taken as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut layer = toml::Table::new();
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let raw = raw.trim();
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            layer.insert(key.to_string(), value);
        }
        self.merged(layer)
    }

    fn merged(&self, layer: toml::Table) -> Result<Self> {
        let mut base = toml::Table::try_from(self).expect("config serializes to a table");
        for (key, value) in layer {
            if !base.contains_key(&key) {
                return Err(Error::config(&key, "unknown key"));
            }
            base.insert(key, value);
        }
        let merged: CalibConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(&first_word(&e.to_string()), e.to_string()))?;
        merged.validate()?;
        Ok(merged)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::default().merged_with_text(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn first_word(s: &str) -> String {
    s.split_whitespace().next().unwrap_or("config").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = CalibConfig::default();
        c.validate().unwrap();
        assert_eq!(c.prune_threshold(), 500.0);
    }

    #[test]
    fn text_roundtrip() {
        let c = CalibConfig {
            kappa: 7.5,
            tau_center_mode: TauCenterMode::Fixed,
            ..Default::default()
        };
        let back = CalibConfig::default().merged_with_text(&c.to_text(), "mem").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_take_precedence() {
        let file = CalibConfig::default()
            .merged_with_text("kappa = 4\ntau1 = 0.2\n", "mem")
            .unwrap();
        let c = file.with_overrides(&["kappa=12", "tau_center_mode=fixed"]).unwrap();
        assert_eq!(c.kappa, 12.0);
        assert_eq!(c.tau1, 0.2);
        assert_eq!(c.tau_center_mode, TauCenterMode::Fixed);
    }

    #[test]
    fn rejects_unknown_key() {
        let err = CalibConfig::default().with_overrides(&["kapa=3"]).unwrap_err();
        assert!(err.to_string().contains("kapa"), "{err}");
    }

    #[test]
    fn rejects_each_out_of_range_field() {
        let cases: &[(&str, &str)] = &[
            ("lambda_base", "lambda_base=0"),
            ("lambda_base", "lambda_base=1.5"),
            ("kappa", "kappa=0"),
            ("tau1", "tau1=1.0"),
            ("tau2", "tau2=0.2"),
            ("tau2", "tau2=0"),
            ("eta", "eta=0"),
            ("eta", "eta=1.01"),
            ("t_start", "t_start=10000"),
            ("dcp_window", "dcp_window=14"),
            ("alpha_min", "alpha_min=0"),
            ("d_middle", "d_middle=1.0"),
            ("t_prune", "t_prune=0"),
            ("lambda1", "lambda1=-0.1"),
        ];
        for (field, ov) in cases {
            let err = CalibConfig::default().with_overrides(&[*ov]).unwrap_err();
            match err {
                Error::Config { field: f, .. } => assert_eq!(&f, field, "override {ov}"),
                other => panic!("override {ov}: unexpected {other}"),
            }
        }
    }
}
