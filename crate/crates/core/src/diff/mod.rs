//! Loss, analytic backward pass through the rasterizer, and Adam.

mod adam;
mod backward;
mod loss;

pub use adam::{LearningRates, OptimizerState, BETA1, BETA2, EPSILON};
pub use backward::{backward, backward_with, BackwardOutput, GaussianGradients};
pub use loss::{loss, loss_and_grad, ssim_and_grad};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::gaussian::{GaussianPrimitive, PARAM_COUNT};
    use crate::image::Image;
    use crate::rasterizer::render;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> Camera {
        Camera::look_at(0, Vector3::new(0.3, -0.2, -4.0), Vector3::zeros(), -Vector3::y(), 32, 32, 50.0)
    }

    /// Large, faint Gaussians whose 3σ boxes cover the whole frame, against
    /// a ground truth brighter than any render so the L1 term stays smooth.
    fn smooth_scene(seed: u64, n: usize) -> (Vec<GaussianPrimitive>, Image) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gs = (0..n)
            .map(|_| {
                let pos = Vector3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.5..0.5));
                let scale = Vector3::new(rng.random_range(0.9..1.3), rng.random_range(0.9..1.3), rng.random_range(0.9..1.3));
                let q = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let mut g = GaussianPrimitive::new(
                    pos,
                    scale,
                    crate::gaussian::normalize_quat(q),
                    rng.random_range(0.05..0.5),
                    Vector3::new(rng.random_range(0.0..0.8), rng.random_range(0.0..0.8), rng.random_range(0.0..0.8)),
                );
                g.normalize_rotation();
                g
            })
            .collect();
        let gt = Image::from_fn(32, 32, |_, _| {
            [rng.random_range(0.85..1.0), rng.random_range(0.85..1.0), rng.random_range(0.85..1.0)]
        });
        (gs, gt)
    }

    fn loss_of(gs: &[GaussianPrimitive], cam: &Camera, gt: &Image) -> f64 {
        loss(&render(gs, cam, None).unwrap().color, gt, 0.2).unwrap()
    }

    #[test]
    fn analytic_matches_central_differences() {
        let cam = camera();
        for seed in 0..3 {
            let (gs, gt) = smooth_scene(seed, 4);
            let (l, grads) = backward(&gs, &cam, &gt, None, 0.2).unwrap();
            assert!((l - loss_of(&gs, &cam, &gt)).abs() < 1e-12);
            for (i, g) in gs.iter().enumerate() {
                for k in 0..PARAM_COUNT {
                    let h = 1e-4;
                    let mut p = gs.clone();
                    let mut b = g.params();
                    b[k] += h;
                    p[i].set_params(&b);
                    let mut m = gs.clone();
                    let mut b = g.params();
                    b[k] -= h;
                    m[i].set_params(&b);
                    let fd = (loss_of(&p, &cam, &gt) - loss_of(&m, &cam, &gt)) / (2.0 * h);
                    let an = grads.params[i][k];
                    let mag = fd.abs().max(an.abs());
                    if mag < 1e-4 {
                        assert!((fd - an).abs() < 1e-6, "seed {seed} g{i} p{k}: {fd} vs {an}");
                    } else {
                        assert!((fd - an).abs() / mag < 1e-3, "seed {seed} g{i} p{k}: {fd} vs {an}");
                    }
                }
            }
        }
    }

    #[test]
    fn masked_gaussian_gets_exactly_zero() {
        let cam = camera();
        let (gs, gt) = smooth_scene(7, 5);
        let mask = [true, false, true, true, false];
        let (_, grads) = backward(&gs, &cam, &gt, Some(&mask), 0.2).unwrap();
        for (i, keep) in mask.iter().enumerate() {
            if !keep {
                assert!(grads.params[i].iter().all(|v| *v == 0.0));
                assert_eq!(grads.grad2d_norm[i], 0.0);
                assert!(!grads.in_view[i]);
            } else {
                assert!(grads.params[i].iter().any(|v| *v != 0.0));
            }
        }
    }

    #[test]
    fn zero_opacity_only_moves_opacity() {
        let cam = camera();
        let (mut gs, gt) = smooth_scene(8, 3);
        gs[1].opacity_logit = f64::NEG_INFINITY;
        let (_, grads) = backward(&gs, &cam, &gt, None, 0.2).unwrap();
        for k in 0..PARAM_COUNT {
            if k != crate::gaussian::param::OPACITY.start {
                assert_eq!(grads.params[1][k], 0.0, "param {k}");
            }
        }
    }

    #[test]
    fn culled_gaussian_gets_zero() {
        let cam = camera();
        let (mut gs, gt) = smooth_scene(9, 3);
        gs[2].position = cam.center() - cam.forward();
        let (_, grads) = backward(&gs, &cam, &gt, None, 0.2).unwrap();
        assert!(grads.params[2].iter().all(|v| *v == 0.0));
    }
}
