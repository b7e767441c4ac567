use nalgebra::{Matrix3, UnitQuaternion, Vector3};

/// Number of optimizable scalars per Gaussian.
pub const PARAM_COUNT: usize = 14;

/// Offsets of each parameter group inside a flat `[f64; PARAM_COUNT]` block.
pub mod param {
    use std::ops::Range;

    pub const POSITION: Range<usize> = 0..3;
    pub const LOG_SCALE: Range<usize> = 3..6;
    pub const ROTATION: Range<usize> = 6..10;
    pub const OPACITY: Range<usize> = 10..11;
    pub const COLOR: Range<usize> = 11..14;

    pub const GROUPS: [(&str, Range<usize>); 5] = [
        ("position", POSITION),
        ("log_scale", LOG_SCALE),
        ("rotation", ROTATION),
        ("opacity", OPACITY),
        ("color", COLOR),
    ];
}

pub type ParamBlock = [f64; PARAM_COUNT];

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic 3D Gaussian.
///
/// Scale and opacity are kept in their unconstrained forms (log-scale and
/// logit); the activated values come from [`scale`](Self::scale) and
/// [`opacity`](Self::opacity).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// Quaternion as (w, x, y, z). Normalized on use.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
    pub dcp_score: f64,
}

impl GaussianPrimitive {
    pub fn new(position: Vector3<f64>, scale: Vector3<f64>, rotation: [f64; 4], opacity: f64, color: Vector3<f64>) -> Self {
        Self {
            position,
            log_scale: scale.map(f64::ln),
            rotation,
            opacity_logit: logit(opacity.clamp(1e-12, 1.0 - 1e-12)),
            color,
            dcp_score: 0.0,
        }
    }

    pub fn isotropic(position: Vector3<f64>, sigma: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self::new(
            position,
            Vector3::repeat(sigma),
            [1.0, 0.0, 0.0, 0.0],
            opacity,
            color,
        )
    }

    #[inline]
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn set_opacity(&mut self, alpha: f64) {
        self.opacity_logit = logit(alpha.clamp(1e-12, 1.0 - 1e-12));
    }

    #[inline]
    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn unit_rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_from_quat(normalize_quat(self.rotation))
    }

    /// World-space covariance `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let m = self.rotation_matrix() * Matrix3::from_diagonal(&self.scale());
        m * m.transpose()
    }

    pub fn normalize_rotation(&mut self) {
        self.rotation = normalize_quat(self.rotation);
    }

    pub fn params(&self) -> ParamBlock {
        let mut p = [0.0; PARAM_COUNT];
        p[param::POSITION].copy_from_slice(self.position.as_slice());
        p[param::LOG_SCALE].copy_from_slice(self.log_scale.as_slice());
        p[param::ROTATION].copy_from_slice(&self.rotation);
        p[param::OPACITY.start] = self.opacity_logit;
        p[param::COLOR].copy_from_slice(self.color.as_slice());
        p
    }

    pub fn set_params(&mut self, p: &ParamBlock) {
        self.position = Vector3::from_column_slice(&p[param::POSITION]);
        self.log_scale = Vector3::from_column_slice(&p[param::LOG_SCALE]);
        self.rotation.copy_from_slice(&p[param::ROTATION]);
        self.opacity_logit = p[param::OPACITY.start];
        self.color = Vector3::from_column_slice(&p[param::COLOR]);
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite()) && self.dcp_score.is_finite()
    }
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return [1.0, 0.0, 0.0, 0.0];
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn rotation_from_quat(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Quaternion (w, x, y, z) of a rotation matrix.
pub fn quat_from_rotation(m: &Matrix3<f64>) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*m);
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    [q.w, q.i, q.j, q.k]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_logit_inverse() {
        for p in [0.001, 0.05, 0.5, 0.93, 0.999] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn quaternion_matrix_roundtrip() {
        let q = normalize_quat([0.3, -0.5, 0.7, 0.2]);
        let m = rotation_from_quat(q);
        assert!((m * m.transpose() - Matrix3::identity()).norm() < 1e-12);
        let back = quat_from_rotation(&m);
        let same = (0..4).all(|i| (back[i] - q[i]).abs() < 1e-9);
        let flipped = (0..4).all(|i| (back[i] + q[i]).abs() < 1e-9);
        assert!(same || flipped);
    }

    #[test]
    fn params_roundtrip() {
        let mut g = GaussianPrimitive::new(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(0.1, 0.2, 0.3),
            [1.0, 0.0, 0.0, 0.0],
            0.4,
            Vector3::new(0.2, 0.4, 0.6),
        );
        let p = g.params();
        g.set_params(&p);
        assert_eq!(g.params(), p);
        assert!((g.opacity() - 0.4).abs() < 1e-12);
    }
}
