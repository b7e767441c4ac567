//! Synthetic benchmark scenes.
//!
//! Surfaces are covered with flat Gaussians, ground truth is rendered from
//! the clean scene itself, and floaters can be planted in a slab between the
//! cameras and the surfaces. Surface colors keep the blue channel near zero
//! so clean renders have a dark dark channel.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Triangular};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{quat_from_rotation, GaussianPrimitive};
use crate::rasterizer::render;
use crate::scene::{Scene, View};

pub const MIN_IMAGE_SIZE: usize = 32;
const SURFACE_OPACITY: f64 = 0.9;
const SURFACE_THICKNESS: f64 = 0.01;
const SURFACE_BLUE: f64 = 0.02;
const ARC_HALF_ANGLE_DEG: f64 = 30.0;
const ELEVATION_DEG: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum Template {
    TexturedWall,
    TwoPlaneBox,
    SphereField,
}

impl Template {
    pub fn name(self) -> &'static str {
        match self {
            Template::TexturedWall => "textured-wall",
            Template::TwoPlaneBox => "two-plane-box",
            Template::SphereField => "sphere-field",
        }
    }

    fn target(self) -> Vector3<f64> {
        match self {
            Template::TexturedWall | Template::SphereField => Vector3::zeros(),
            Template::TwoPlaneBox => Vector3::new(0.0, -0.5, -0.4),
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textured-wall" => Ok(Template::TexturedWall),
            "two-plane-box" => Ok(Template::TwoPlaneBox),
            "sphere-field" => Ok(Template::SphereField),
            other => Err(Error::InvalidArgument(format!("unknown template `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub template: Template,
    pub surface_count: usize,
    /// Training cameras. Held-out cameras sit halfway between neighbours.
    pub camera_count: usize,
    pub rig_radius: f64,
    /// Square images of this side length.
    pub image_size: usize,
    pub fov_y_degrees: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            template: Template::TwoPlaneBox,
            surface_count: 2000,
            camera_count: 6,
            rig_radius: 4.0,
            image_size: 64,
            fov_y_degrees: 50.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.surface_count == 0 {
            return Err(Error::InvalidArgument("surface_count must be > 0".into()));
        }
        if self.camera_count == 0 {
            return Err(Error::InvalidArgument("camera_count must be > 0".into()));
        }
        if self.image_size < MIN_IMAGE_SIZE {
            return Err(Error::ImageTooSmall {
                width: self.image_size,
                height: self.image_size,
                min: MIN_IMAGE_SIZE,
            });
        }
        if !(self.rig_radius.is_finite() && self.rig_radius > 2.5) {
            return Err(Error::InvalidArgument(format!(
                "rig_radius {} must be finite and > 2.5 to clear the geometry",
                self.rig_radius
            )));
        }
        if !(self.fov_y_degrees > 1.0 && self.fov_y_degrees < 170.0) {
            return Err(Error::InvalidArgument(format!("fov_y_degrees {} out of range", self.fov_y_degrees)));
        }
        Ok(())
    }
}

/// Axis-aligned box, used for the floater slab.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloaterSpec {
    pub count: usize,
    pub opacity_range: (f64, f64),
    /// Opacities follow a triangular law on `opacity_range` with this mean.
    pub opacity_mean: f64,
    /// Mean floater color `A`.
    pub color_mean: Vector3<f64>,
    pub color_std: f64,
    pub sigma_range: (f64, f64),
    pub slab: Aabb,
}

impl Default for FloaterSpec {
    fn default() -> Self {
        Self {
            count: 500,
            opacity_range: (0.02, 0.15),
            opacity_mean: 0.08,
            color_mean: Vector3::repeat(0.8),
            color_std: 0.05,
            sigma_range: (0.08, 0.15),
            slab: Aabb {
                min: Vector3::new(-1.5, -1.2, -2.3),
                max: Vector3::new(1.5, 1.2, -1.2),
            },
        }
    }
}

impl FloaterSpec {
    fn triangular_mode(&self) -> f64 {
        let (a, b) = self.opacity_range;
        3.0 * self.opacity_mean - a - b
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.opacity_range;
        if !(a > 0.0 && a < b && b < 1.0) {
            return Err(Error::InvalidArgument(format!("opacity range [{a}, {b}] must lie inside (0, 1)")));
        }
        let mode = self.triangular_mode();
        if !(a..=b).contains(&mode) {
            return Err(Error::InvalidArgument(format!(
                "opacity mean {} is not reachable on [{a}, {b}]",
                self.opacity_mean
            )));
        }
        if !(self.color_std >= 0.0 && self.color_mean.iter().all(|c| (0.0..=1.0).contains(c))) {
            return Err(Error::InvalidArgument("floater color mean must be in [0, 1] with std >= 0".into()));
        }
        let (s0, s1) = self.sigma_range;
        if !(s0 > 0.0 && s0 <= s1) {
            return Err(Error::InvalidArgument(format!("sigma range [{s0}, {s1}] is invalid")));
        }
        if (0..3).any(|k| !(self.slab.min[k] < self.slab.max[k])) {
            return Err(Error::InvalidArgument("floater slab is empty".into()));
        }
        Ok(())
    }
}

fn texture(u: f64, v: f64, surface: usize) -> Vector3<f64> {
    let checker = if ((u * 2.0).floor() + (v * 2.0).floor()) as i64 % 2 == 0 { 0.15 } else { 0.0 };
    let phase = surface as f64 * 1.7;
    let r = 0.4 + 0.25 * (3.0 * u + phase).sin() * (2.0 * v).cos() + checker;
    let g = 0.25 + 0.2 * (5.0 * u + v + phase).cos() + 0.5 * checker;
    Vector3::new(r.clamp(0.05, 0.95), g.clamp(0.05, 0.95), SURFACE_BLUE)
}

/// Flat Gaussians on the rectangle `origin + u*eu + v*ev`, `u ∈ [0, lu]`,
/// `v ∈ [0, lv]`, on a jittered grid.
fn cover_rect(
    out: &mut Vec<GaussianPrimitive>,
    rng: &mut ChaCha8Rng,
    count: usize,
    origin: Vector3<f64>,
    eu: Vector3<f64>,
    ev: Vector3<f64>,
    (lu, lv): (f64, f64),
    surface: usize,
) {
    if count == 0 {
        return;
    }
    let cols = ((count as f64 * lu / lv).sqrt().round() as usize).clamp(1, count);
    let rows = count.div_ceil(cols);
    let (du, dv) = (lu / cols as f64, lv / rows as f64);
    let normal = eu.cross(&ev);
    let rot = quat_from_rotation(&Matrix3::from_columns(&[eu, ev, normal]));
    let scale = Vector3::new(0.7 * du, 0.7 * dv, SURFACE_THICKNESS);
    for k in 0..count {
        let u = ((k % cols) as f64 + 0.5 + rng.random_range(-0.3..0.3)) * du;
        let v = ((k / cols) as f64 + 0.5 + rng.random_range(-0.3..0.3)) * dv;
        out.push(GaussianPrimitive::new(origin + eu * u + ev * v, scale, rot, SURFACE_OPACITY, texture(u, v, surface)));
    }
}

fn cover_sphere(
    out: &mut Vec<GaussianPrimitive>,
    rng: &mut ChaCha8Rng,
    count: usize,
    center: Vector3<f64>,
    radius: f64,
    surface: usize,
) {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let spacing = radius * (4.0 * std::f64::consts::PI / count.max(1) as f64).sqrt();
    for k in 0..count {
        let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = golden * k as f64 + rng.random_range(-0.05..0.05);
        let n = Vector3::new(r * phi.cos(), r * phi.sin(), z);
        let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let t1 = helper.cross(&n).normalize();
        let t2 = n.cross(&t1);
        let rot = quat_from_rotation(&Matrix3::from_columns(&[t1, t2, n]));
        let scale = Vector3::new(0.6 * spacing, 0.6 * spacing, SURFACE_THICKNESS);
        let color = texture(phi.rem_euclid(std::f64::consts::TAU), 2.0 * z, surface);
        out.push(GaussianPrimitive::new(center + n * radius, scale, rot, SURFACE_OPACITY, color));
    }
}

/// Split `n` proportionally to `weights`, giving rounding leftovers to the
/// first entries (there are fewer leftovers than entries).
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights.iter().map(|w| (n as f64 * w / total).floor() as usize).collect();
    let rest = n - counts.iter().sum::<usize>();
    for c in counts.iter_mut().take(rest) {
        *c += 1;
    }
    counts
}

fn surface_gaussians(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<GaussianPrimitive> {
    let n = spec.surface_count;
    let mut out = Vec::with_capacity(n);
    match spec.template {
        Template::TexturedWall => {
            cover_rect(&mut out, rng, n, Vector3::new(-2.0, -1.5, 0.0), Vector3::x(), Vector3::y(), (4.0, 3.0), 0);
        }
        Template::TwoPlaneBox => {
            let c = apportion(n, &[14.4, 5.28]);
            cover_rect(&mut out, rng, c[0], Vector3::new(-2.4, -1.5, 0.0), Vector3::x(), Vector3::y(), (4.8, 3.0), 0);
            // Floor: eu = z, ev = x gives an upward normal. It stops short of
            // the default floater slab so floaters stay in front of it.
            cover_rect(&mut out, rng, c[1], Vector3::new(-2.4, -1.5, -1.1), Vector3::z(), Vector3::x(), (1.1, 4.8), 1);
        }
        Template::SphereField => {
            let spheres = [
                (Vector3::new(-1.0, 0.5, 0.2), 0.55),
                (Vector3::new(0.9, 0.6, 0.0), 0.5),
                (Vector3::new(0.0, -0.1, 0.1), 0.6),
                (Vector3::new(-0.9, -0.8, 0.3), 0.45),
                (Vector3::new(1.0, -0.7, 0.2), 0.5),
            ];
            let c = apportion(n, &spheres.map(|(_, r)| r * r));
            for (k, ((center, r), m)) in spheres.iter().zip(c).enumerate() {
                cover_sphere(&mut out, rng, m, *center, *r, k);
            }
        }
    }
    out
}

fn rig(spec: &SceneSpec) -> (Vec<Camera>, Vec<Camera>) {
    let n = spec.camera_count;
    let h = ARC_HALF_ANGLE_DEG;
    let train_deg: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|i| -h + 2.0 * h * i as f64 / (n - 1) as f64).collect()
    };
    let test_deg: Vec<f64> = if n == 1 {
        vec![h / 2.0]
    } else {
        train_deg.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    };
    let target = spec.template.target();
    let e = ELEVATION_DEG.to_radians();
    let make = |id: usize, deg: f64| {
        let a = deg.to_radians();
        let eye = target + spec.rig_radius * Vector3::new(a.sin() * e.cos(), e.sin(), -a.cos() * e.cos());
        Camera::look_at(id as u32, eye, target, Vector3::y(), spec.image_size, spec.image_size, spec.fov_y_degrees)
    };
    let train = train_deg.iter().enumerate().map(|(i, d)| make(i, *d)).collect();
    let test = test_deg.iter().enumerate().map(|(i, d)| make(n + i, *d)).collect();
    (train, test)
}

fn render_views(gaussians: &[GaussianPrimitive], cameras: Vec<Camera>) -> Result<Vec<View>> {
    cameras
        .into_par_iter()
        .map(|camera| {
            let mut image = render(gaussians, &camera, None)?.color;
            image.clamp01();
            Ok(View { camera, image })
        })
        .collect()
}

/// Build a clean scene whose ground truth is its own render.
pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gaussians = surface_gaussians(spec, &mut rng);
    let (train_cams, test_cams) = rig(spec);
    let train = render_views(&gaussians, train_cams)?;
    let test = render_views(&gaussians, test_cams)?;
    Ok(Scene { gaussians, train, test })
}

/// Append `fspec.count` floaters. Ground truth is left untouched; the
/// returned flags mark the appended suffix.
pub fn inject_floaters(scene: &Scene, fspec: &FloaterSpec, seed: u64) -> Result<(Scene, Vec<bool>)> {
    fspec.validate()?;
    if let Some(i) = scene.gaussians.iter().position(|g| fspec.slab.contains(&g.position)) {
        return Err(Error::InvalidArgument(format!("floater slab contains existing gaussian {i}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = fspec.opacity_range;
    let opacity = Triangular::new(a, b, fspec.triangular_mode()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise = Normal::new(0.0, fspec.color_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (s0, s1) = fspec.sigma_range;
    let mut out = scene.clone();
    for _ in 0..fspec.count {
        let p = Vector3::from_fn(|k, _| rng.random_range(fspec.slab.min[k]..=fspec.slab.max[k]));
        let sigma = if s0 < s1 { rng.random_range(s0..s1) } else { s0 };
        let alpha = opacity.sample(&mut rng);
        let color = fspec.color_mean.map(|c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0));
        out.gaussians.push(GaussianPrimitive::isotropic(p, sigma, alpha, color));
    }
    let mut flags = vec![false; scene.gaussians.len()];
    flags.resize(out.gaussians.len(), true);
    Ok((out, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::angular_separation_degrees;
    use crate::dcp::dark_channel;
    use crate::metrics::psnr;

    fn small(template: Template) -> SceneSpec {
        SceneSpec {
            template,
            surface_count: 600,
            camera_count: 3,
            image_size: 32,
            ..Default::default()
        }
    }

    #[test]
    fn self_consistent_ground_truth() {
        for t in [Template::TexturedWall, Template::TwoPlaneBox, Template::SphereField] {
            let scene = generate(&small(t)).unwrap();
            for v in scene.train.iter().chain(&scene.test) {
                let r = render(&scene.gaussians, &v.camera, None).unwrap().color;
                assert!(psnr(&r, &v.image).unwrap() >= 50.0, "{t}");
            }
        }
    }

    #[test]
    fn surfaces_cover_most_of_the_view() {
        let scene = generate(&SceneSpec::default()).unwrap();
        for v in &scene.train {
            let lit = v.image.as_slice().chunks(3).filter(|p| p[0] > 0.05).count();
            assert!(lit as f64 > 0.8 * v.image.pixel_count() as f64);
        }
    }

    #[test]
    fn held_out_rig_is_disjoint() {
        for n in [1, 2, 6] {
            let scene = generate(&SceneSpec {
                camera_count: n,
                ..small(Template::TexturedWall)
            })
            .unwrap();
            assert_eq!(scene.train.len(), n);
            assert!(!scene.test.is_empty());
            for a in &scene.test {
                for b in &scene.train {
                    assert!(angular_separation_degrees(&a.camera, &b.camera) > 5.0);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small(Template::SphereField);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = generate(&SceneSpec { seed: 1, ..spec.clone() }).unwrap();
        assert_ne!(other.gaussians, generate(&spec).unwrap().gaussians);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate(&SceneSpec {
            image_size: 31,
            ..Default::default()
        })
        .is_err());
        assert!(generate(&SceneSpec {
            surface_count: 0,
            ..Default::default()
        })
        .is_err());
        let f = FloaterSpec {
            opacity_range: (0.0, 0.15),
            ..Default::default()
        };
        assert!(f.validate().is_err());
        let f = FloaterSpec {
            opacity_mean: 0.14,
            ..Default::default()
        };
        assert!(f.validate().is_err());
    }

    #[test]
    fn zero_floaters_is_noop() {
        let scene = generate(&small(Template::TwoPlaneBox)).unwrap();
        let (out, flags) = inject_floaters(&scene, &FloaterSpec { count: 0, ..Default::default() }, 3).unwrap();
        assert_eq!(out, scene);
        assert_eq!(flags, vec![false; scene.gaussians.len()]);
    }

    #[test]
    fn slab_overlapping_surface_rejected() {
        let scene = generate(&small(Template::TexturedWall)).unwrap();
        let f = FloaterSpec {
            slab: Aabb {
                min: Vector3::new(-1.0, -1.0, -0.5),
                max: Vector3::new(1.0, 1.0, 0.5),
            },
            ..Default::default()
        };
        assert!(inject_floaters(&scene, &f, 0).is_err());
    }

    #[test]
    fn floaters_follow_spec_and_degrade_renders() {
        let scene = generate(&SceneSpec::default()).unwrap();
        let fspec = FloaterSpec::default();
        let (dirty, flags) = inject_floaters(&scene, &fspec, 11).unwrap();
        let n = scene.gaussians.len();
        assert_eq!(flags.len(), n + 500);
        assert!(flags[..n].iter().all(|f| !f) && flags[n..].iter().all(|f| *f));
        assert_eq!(dirty.train, scene.train);
        assert_eq!(dirty.gaussians[..n], scene.gaussians[..]);

        let ops: Vec<f64> = dirty.gaussians[n..].iter().map(|g| g.opacity()).collect();
        let mean = ops.iter().sum::<f64>() / ops.len() as f64;
        assert!((mean - 0.08).abs() < 0.005, "{mean}");
        assert!(ops.iter().all(|o| (0.02..=0.15).contains(o)));
        assert!(dirty.gaussians[n..].iter().all(|g| fspec.slab.contains(&g.position)));

        for v in &scene.train {
            let clean = render(&scene.gaussians, &v.camera, None).unwrap().color;
            let hazy = render(&dirty.gaussians, &v.camera, None).unwrap().color;
            assert!(dark_channel(&hazy).mean() > dark_channel(&clean).mean() + 0.02);
        }
        for v in &scene.test {
            let clean = render(&scene.gaussians, &v.camera, None).unwrap().color;
            let hazy = render(&dirty.gaussians, &v.camera, None).unwrap().color;
            let harm = psnr(&clean, &v.image).unwrap() - psnr(&hazy, &v.image).unwrap();
            assert!(harm >= 1.0, "{harm}");
        }
    }
}
