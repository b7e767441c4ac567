use crate::config::CalibConfig;
use crate::error::{Error, Result};
use crate::gaussian::{param, GaussianPrimitive, ParamBlock, PARAM_COUNT};

use super::GaussianGradients;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

const MAGIC: &[u8; 8] = b"SPLTADAM";

#[derive(Clone, Debug, PartialEq)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    /// Iterations over which the position rate decays.
    pub position_steps: u32,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl LearningRates {
    pub fn from_config(cfg: &CalibConfig) -> Self {
        Self {
            position_init: cfg.lr_position_init,
            position_final: cfg.lr_position_final,
            position_steps: cfg.total_iters,
            log_scale: cfg.lr_scale,
            rotation: cfg.lr_rotation,
            opacity: cfg.lr_opacity,
            color: cfg.lr_color,
        }
    }

    /// Log-linear interpolation between the initial and final position rates.
    pub fn position_at(&self, step: u64) -> f64 {
        if self.position_steps == 0 {
            return self.position_final;
        }
        let t = (step as f64 / self.position_steps as f64).clamp(0.0, 1.0);
        (self.position_init.ln() * (1.0 - t) + self.position_final.ln() * t).exp()
    }

    /// Per-scalar rates for one parameter block at `step`.
    pub fn block(&self, step: u64) -> ParamBlock {
        let mut lr = [0.0; PARAM_COUNT];
        lr[param::POSITION].fill(self.position_at(step));
        lr[param::LOG_SCALE].fill(self.log_scale);
        lr[param::ROTATION].fill(self.rotation);
        lr[param::OPACITY].fill(self.opacity);
        lr[param::COLOR].fill(self.color);
        lr
    }
}

/// Adam moments for every Gaussian, kept index-aligned with the Gaussian list.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<ParamBlock>,
    pub v: Vec<ParamBlock>,
    pub rates: LearningRates,
    pub step_count: u64,
    /// Gaussians skipped because their gradient was not finite.
    pub skipped_nonfinite: u64,
}

impl OptimizerState {
    pub fn new(n: usize, rates: LearningRates) -> Self {
        Self {
            m: vec![[0.0; PARAM_COUNT]; n],
            v: vec![[0.0; PARAM_COUNT]; n],
            rates,
            step_count: 0,
            skipped_nonfinite: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One Adam update. Quaternions are renormalized and colors clamped to
    /// [0, 1] afterwards. Returns how many Gaussians were skipped.
    pub fn step(&mut self, grads: &GaussianGradients, gaussians: &mut [GaussianPrimitive]) -> Result<usize> {
        if grads.len() != gaussians.len() || self.len() != gaussians.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gaussians, {} gradients, {} optimizer slots",
                gaussians.len(),
                grads.len(),
                self.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let lr = self.rates.block(self.step_count);
        let mut skipped = 0;
        for (i, g) in gaussians.iter_mut().enumerate() {
            let grad = &grads.params[i];
            if grad.iter().any(|v| !v.is_finite()) {
                skipped += 1;
                continue;
            }
            let mut p = g.params();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..PARAM_COUNT {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * grad[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * grad[k] * grad[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr[k] * m_hat / (v_hat.sqrt() + EPSILON);
            }
            g.set_params(&p);
            g.normalize_rotation();
            g.color = g.color.map(|c| c.clamp(0.0, 1.0));
        }
        self.skipped_nonfinite += skipped as u64;
        Ok(skipped)
    }

    /// Keep the slots where `keep[i]` is true.
    pub fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.m.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.v.retain(|_| *it.next().unwrap());
    }

    /// Append a slot with moments copied from `source`.
    pub fn push_copy(&mut self, source: usize) {
        self.m.push(self.m[source]);
        self.v.push(self.v[source]);
    }

    pub fn push_zeroed(&mut self) {
        self.m.push([0.0; PARAM_COUNT]);
        self.v.push([0.0; PARAM_COUNT]);
    }

    pub fn reset_slot(&mut self, i: usize) {
        self.m[i] = [0.0; PARAM_COUNT];
        self.v[i] = [0.0; PARAM_COUNT];
    }

    /// Binary snapshot of step count and moments.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.len() * PARAM_COUNT * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.step_count.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for block in self.m.iter().chain(&self.v) {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], rates: LearningRates, file: &str) -> Result<Self> {
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(Error::parse(file, 0, "not an optimizer snapshot"));
        }
        let step_count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let n = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let need = 24 + n * PARAM_COUNT * 16;
        if bytes.len() != need {
            return Err(Error::parse(file, 0, format!("expected {need} bytes, found {}", bytes.len())));
        }
        let mut vals = bytes[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut read = |count: usize| -> Vec<ParamBlock> {
            (0..count)
                .map(|_| {
                    let mut b = [0.0; PARAM_COUNT];
                    b.iter_mut().for_each(|x| *x = vals.next().unwrap());
                    b
                })
                .collect()
        };
        let m = read(n);
        let v = read(n);
        Ok(Self {
            m,
            v,
            rates,
            step_count,
            skipped_nonfinite: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn rates() -> LearningRates {
        LearningRates::from_config(&CalibConfig::default())
    }

    fn gaussian() -> GaussianPrimitive {
        GaussianPrimitive::new(
            Vector3::new(0.1, -0.2, 0.3),
            Vector3::new(0.1, 0.2, 0.3),
            [0.9, 0.1, -0.3, 0.2],
            0.4,
            Vector3::new(0.2, 0.5, 0.7),
        )
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut g = vec![gaussian()];
        g[0].normalize_rotation();
        let before = g.clone();
        let mut opt = OptimizerState::new(1, rates());
        opt.step(&GaussianGradients::zeros(1), &mut g).unwrap();
        assert_eq!(g, before);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut g = vec![gaussian()];
        let start = g[0].params();
        let mut opt = OptimizerState::new(1, rates());
        let mut grads = GaussianGradients::zeros(1);
        grads.params[0][param::POSITION.start] = 0.7;
        grads.params[0][param::OPACITY.start] = -0.3;
        grads.params[0][param::COLOR.start + 1] = 2.0;
        for _ in 0..50 {
            opt.step(&grads, &mut g).unwrap();
        }
        let end = g[0].params();
        assert!(end[param::POSITION.start] < start[param::POSITION.start]);
        assert!(end[param::OPACITY.start] > start[param::OPACITY.start]);
        assert!(end[param::COLOR.start + 1] < start[param::COLOR.start + 1]);
    }

    #[test]
    fn quadratic_converges_to_minimizer() {
        // L = 0.5 (x - 1.7)² on the opacity logit.
        let target = 1.7;
        let mut g = vec![gaussian()];
        let mut opt = OptimizerState::new(1, rates());
        for _ in 0..500 {
            let mut grads = GaussianGradients::zeros(1);
            grads.params[0][param::OPACITY.start] = g[0].opacity_logit - target;
            opt.step(&grads, &mut g).unwrap();
        }
        assert!((g[0].opacity_logit - target).abs() < 1e-3, "{}", g[0].opacity_logit);
    }

    #[test]
    fn rotation_stays_unit_and_colors_clamped() {
        let mut g = vec![gaussian()];
        let mut opt = OptimizerState::new(1, rates());
        let mut grads = GaussianGradients::zeros(1);
        grads.params[0][param::ROTATION].copy_from_slice(&[0.3, -1.0, 2.0, 0.5]);
        grads.params[0][param::COLOR].copy_from_slice(&[-1.0, 1.0, -1.0]);
        for _ in 0..400 {
            opt.step(&grads, &mut g).unwrap();
            let n: f64 = g[0].rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert!(g[0].color.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn nonfinite_gradient_skips_gaussian() {
        let mut g = vec![gaussian(), gaussian()];
        let before = g[0].clone();
        let mut opt = OptimizerState::new(2, rates());
        let mut grads = GaussianGradients::zeros(2);
        grads.params[0][0] = f64::NAN;
        grads.params[1][0] = 1.0;
        assert_eq!(opt.step(&grads, &mut g).unwrap(), 1);
        assert_eq!(g[0], before);
        assert_ne!(g[1].position, before.position);
        assert_eq!(opt.skipped_nonfinite, 1);
        assert!(opt.m[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn position_rate_decays_log_linearly() {
        let r = rates();
        assert!((r.position_at(0) - 1.6e-4).abs() < 1e-18);
        assert!((r.position_at(10_000) - 1.6e-6).abs() < 1e-18);
        assert!((r.position_at(5_000) - 1.6e-5).abs() < 1e-15);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut g = vec![gaussian(), gaussian()];
        let mut opt = OptimizerState::new(2, rates());
        let mut grads = GaussianGradients::zeros(2);
        grads.params[1][4] = 0.25;
        opt.step(&grads, &mut g).unwrap();
        let back = OptimizerState::from_bytes(&opt.to_bytes(), rates(), "opt").unwrap();
        assert_eq!(back, opt);
        assert!(OptimizerState::from_bytes(&opt.to_bytes()[..30], rates(), "opt").is_err());
    }
}
