use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub const MIN_IMAGE_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Pinhole camera with a world-to-camera rigid transform.
///
/// Camera space looks down +z, with +x to the right and +y down the image.
/// Pixel `(x, y)` samples the image plane at exactly `(x, y)`, so a point on
/// the optical axis lands at `(cx, cy)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target`. `up` is a world direction that
    /// ends up pointing towards the top of the image.
    pub fn look_at(
        id: u32,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: usize,
        height: usize,
        fov_y_degrees: f64,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let fy = 0.5 * height as f64 / (0.5 * fov_y_degrees.to_radians()).tan();
        Self {
            id,
            intrinsics: Intrinsics {
                fx: fy,
                fy,
                cx: width as f64 / 2.0,
                cy: height as f64 / 2.0,
            },
            rotation,
            translation,
            width,
            height,
            near: 0.01,
            far: 100.0,
        }
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Pixel coordinates and depth of a world point, without any culling.
    pub fn project_point(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        let c = self.world_to_camera(p);
        let k = &self.intrinsics;
        (k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy, c.z)
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if ortho > 1e-6 || self.rotation.determinant() < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "camera {}: extrinsic rotation is not a proper orthonormal matrix",
                self.id
            )));
        }
        if self.width < MIN_IMAGE_SIDE || self.height < MIN_IMAGE_SIDE {
            return Err(Error::InvalidArgument(format!(
                "camera {}: image {}x{} smaller than {MIN_IMAGE_SIDE}",
                self.id, self.width, self.height
            )));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidArgument(format!(
                "camera {}: need 0 < near < far, got near={} far={}",
                self.id, self.near, self.far
            )));
        }
        let k = &self.intrinsics;
        if ![k.fx, k.fy, k.cx, k.cy].iter().all(|v| v.is_finite()) || k.fx <= 0.0 || k.fy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "camera {}: invalid intrinsics",
                self.id
            )));
        }
        Ok(())
    }
}

/// Angle in degrees between the viewing directions of two cameras.
pub fn angular_separation_degrees(a: &Camera, b: &Camera) -> f64 {
    a.forward().angle(&b.forward()).to_degrees()
}
