//! Rigid transforms stored as an orthonormal rotation matrix plus a
//! translation.

use nalgebra::{Matrix3, Unit, Vector3};

/// A rigid transform in 3-D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let unit = Unit::new_normalize(*axis);
        Pose {
            rotation: nalgebra::Rotation3::from_axis_angle(&unit, angle).into_inner(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rot_z(angle: f64) -> Self {
        Pose::from_axis_angle(&Vector3::z(), angle)
    }

    /// self * other: apply `other` in the frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Yaw of the x-axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Axis-angle vector of the rotation (the matrix logarithm), used for
    /// rotation equality residuals.
    pub fn rotation_log(&self) -> Vector3<f64> {
        let r = &self.rotation;
        let cos_angle = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        let angle = cos_angle.acos();
        if angle < 1e-10 {
            // Small-angle: log(R) ~ skew part.
            return Vector3::new(
                (r[(2, 1)] - r[(1, 2)]) / 2.0,
                (r[(0, 2)] - r[(2, 0)]) / 2.0,
                (r[(1, 0)] - r[(0, 1)]) / 2.0,
            );
        }
        if (std::f64::consts::PI - angle) < 1e-6 {
            // Near pi the skew part degenerates; recover the axis from the
            // symmetric part.
            let b = (r + Matrix3::identity()) / 2.0;
            let axis = Vector3::new(b[(0, 0)].sqrt(), b[(1, 1)].sqrt(), b[(2, 2)].sqrt());
            let axis = if axis.norm() > 0.0 {
                axis / axis.norm()
            } else {
                Vector3::x()
            };
            return axis * angle;
        }
        let factor = angle / (2.0 * angle.sin());
        Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        ) * factor
    }

    /// Largest deviation of R^T R from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation;
        let det_err = (self.rotation.determinant() - 1.0).abs();
        (gram - Matrix3::identity()).amax().max(det_err)
    }

    /// Re-orthonormalize the rotation by Gram-Schmidt on its columns.
    /// Used after long composition chains to shed floating-point drift.
    pub fn renormalized(&self) -> Pose {
        let c0 = self.rotation.column(0).into_owned().normalize();
        let c1_raw = self.rotation.column(1).into_owned();
        let c1 = (c1_raw - c0 * c0.dot(&c1_raw)).normalize();
        let c2 = c0.cross(&c1);
        Pose {
            rotation: Matrix3::from_columns(&[c0, c1, c2]),
            translation: self.translation,
        }
    }
}
