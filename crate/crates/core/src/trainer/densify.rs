use nalgebra::Vector3;

use super::TrainState;
use crate::config::CalibConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
    /// Origins of Gaussians removed by the low-opacity cull.
    pub culled_origins: Vec<u32>,
}

pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

/// Clone small and split large Gaussians whose mean screen-space gradient
/// exceeds the threshold, then cull nearly transparent ones. Accumulators
/// are reset.
pub fn densify(state: &mut TrainState, cfg: &CalibConfig, scene_extent: f64) -> DensifyOutcome {
    let mut out = DensifyOutcome::default();
    let n = state.gaussians.len();
    let split_above = cfg.densify_scale_fraction * scene_extent;
    for i in 0..n {
        let count = state.grad_count[i];
        if count == 0 {
            continue;
        }
        let avg = state.grad_accum[i] / count as f64;
        if !(avg > cfg.densify_grad_threshold) {
            continue;
        }
        let parent = state.gaussians[i].clone();
        let scale = parent.scale();
        if scale.max() <= split_above {
            state.push_child(parent, i);
            out.cloned += 1;
        } else {
            let axis = scale.imax();
            let dir: Vector3<f64> = parent.rotation_matrix().column(axis).into();
            let offset = dir * (0.5 * scale[axis]);
            let shrink = SPLIT_SCALE_DIVISOR.ln();
            let mut a = parent.clone();
            a.position += offset;
            a.log_scale.add_scalar_mut(-shrink);
            let mut b = parent;
            b.position -= offset;
            b.log_scale.add_scalar_mut(-shrink);
            state.gaussians[i] = a;
            state.optimizer.reset_slot(i);
            state.push_child(b, i);
            out.split += 1;
        }
    }
    state.reset_densify_stats();

    let keep: Vec<bool> = state.gaussians.iter().map(|g| g.opacity() >= cfg.cull_opacity).collect();
    if keep.iter().any(|k| *k) {
        out.culled_origins = state
            .origin
            .iter()
            .zip(&keep)
            .filter(|(_, k)| !**k)
            .map(|(o, _)| *o)
            .collect();
        state.retain(&keep);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianPrimitive;

    fn state(gs: Vec<GaussianPrimitive>) -> TrainState {
        TrainState::new(gs, &CalibConfig::default(), 0)
    }

    #[test]
    fn below_threshold_is_noop() {
        let g = GaussianPrimitive::isotropic(Vector3::zeros(), 0.01, 0.5, Vector3::zeros());
        let mut s = state(vec![g.clone(); 3]);
        s.grad_accum = vec![1e-5; 3];
        s.grad_count = vec![1; 3];
        let out = densify(&mut s, &CalibConfig::default(), 4.0);
        assert_eq!(out, DensifyOutcome::default());
        assert_eq!(s.gaussians, vec![g; 3]);
    }

    #[test]
    fn small_gaussian_is_cloned() {
        let g = GaussianPrimitive::isotropic(Vector3::new(1.0, 2.0, 3.0), 0.01, 0.5, Vector3::new(0.1, 0.2, 0.3));
        let mut s = state(vec![g.clone()]);
        s.grad_accum = vec![1e-3];
        s.grad_count = vec![2];
        let out = densify(&mut s, &CalibConfig::default(), 4.0);
        assert_eq!(out.cloned, 1);
        assert_eq!(s.gaussians, vec![g.clone(), g]);
        assert_eq!(s.origin, vec![0, 0]);
        assert_eq!(s.optimizer.len(), 2);
    }

    #[test]
    fn large_gaussian_is_split() {
        let g = GaussianPrimitive::new(
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.1, 0.4, 0.2),
            [1.0, 0.0, 0.0, 0.0],
            0.5,
            Vector3::new(0.3, 0.3, 0.3),
        );
        let mut s = state(vec![g.clone()]);
        s.grad_accum = vec![1.0];
        s.grad_count = vec![1];
        let out = densify(&mut s, &CalibConfig::default(), 4.0);
        assert_eq!(out.split, 1);
        assert_eq!(s.gaussians.len(), 2);
        let (a, b) = (&s.gaussians[0], &s.gaussians[1]);
        assert!((a.position - Vector3::new(0.0, 1.2, 0.0)).norm() < 1e-12);
        assert!((b.position - Vector3::new(0.0, 0.8, 0.0)).norm() < 1e-12);
        for c in [a, b] {
            assert!((c.scale() - g.scale() / 1.6).norm() < 1e-12);
        }
    }

    #[test]
    fn culls_transparent() {
        let opaque = GaussianPrimitive::isotropic(Vector3::zeros(), 0.01, 0.5, Vector3::zeros());
        let faint = GaussianPrimitive::isotropic(Vector3::zeros(), 0.01, 0.001, Vector3::zeros());
        let mut s = state(vec![faint.clone(), opaque.clone(), faint]);
        let out = densify(&mut s, &CalibConfig::default(), 4.0);
        assert_eq!(out.culled_origins, vec![0, 2]);
        assert_eq!(s.gaussians, vec![opaque]);
        assert_eq!(s.origin, vec![1]);
    }
}
