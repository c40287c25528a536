//! Rigid transforms parameterized by a 6-vector twist.
//!
//! Layout: `[w0, w1, w2, t0, t1, t2]` — axis-angle rotation in radians first,
//! translation in meters second. The rotation uses the Rodrigues formula; the
//! translation is stored directly (not premultiplied by the SO(3) Jacobian),
//! so `exp(0, t)` translates by exactly `t`.

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

/// Rigid SE(3) transform with cached rotation matrix and translation.
#[derive(Clone, Debug)]
pub struct Pose {
    twist: [f64; 6],
    rot: Matrix3<f64>,
    trans: Vector3<f64>,
}

/// Exponential map from a twist to a pose.
///
/// Requires finite components and a rotation angle below pi (principal
/// branch); `se3_exp(&[0.0; 6])` is the identity.
pub fn se3_exp(twist: &[f64; 6]) -> Result<Pose> {
    if !twist.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite twist component".into()));
    }
    let omega = Vector3::new(twist[0], twist[1], twist[2]);
    let angle = omega.norm();
    if angle >= std::f64::consts::PI {
        return Err(Error::InvalidArgument(format!(
            "rotation angle {angle} outside the principal branch (< pi)"
        )));
    }
    Ok(Pose {
        twist: *twist,
        rot: rodrigues(&omega),
        trans: Vector3::new(twist[3], twist[4], twist[5]),
    })
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            twist: [0.0; 6],
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn from_parts(rot: Matrix3<f64>, trans: Vector3<f64>) -> Self {
        let omega = so3_log(&rot);
        Pose {
            twist: [omega.x, omega.y, omega.z, trans.x, trans.y, trans.z],
            rot,
            trans,
        }
    }

    pub fn twist(&self) -> &[f64; 6] {
        &self.twist
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rot
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.trans
    }

    /// Apply the transform to a point: `R p + t`.
    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.trans
    }

    pub fn inverse(&self) -> Pose {
        let rot = self.rot.transpose();
        Pose::from_parts(rot, -(rot * self.trans))
    }

    /// `self` after `other`: (self ∘ other)(p) = self(other(p)).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_parts(self.rot * other.rot, self.rot * other.trans + self.trans)
    }

    /// Jacobian of `R(w) p` with respect to the axis-angle vector `w`,
    /// holding the point fixed: `-R [p]_x Jr(w)`.
    pub fn rotate_point_jacobian(&self, p: &Vector3<f64>) -> Matrix3<f64> {
        let omega = Vector3::new(self.twist[0], self.twist[1], self.twist[2]);
        -self.rot * skew(p) * right_jacobian(&omega)
    }
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula with a series fallback for small angles.
pub(crate) fn rodrigues(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    if theta2 < 1e-16 {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() + (theta.sin() / theta) * k + ((1.0 - theta.cos()) / theta2) * (k * k)
}

/// Axis-angle of a rotation matrix (principal branch).
pub(crate) fn so3_log(rot: &Matrix3<f64>) -> Vector3<f64> {
    let trace = rot.trace();
    let cos = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let anti = Vector3::new(
        rot[(2, 1)] - rot[(1, 2)],
        rot[(0, 2)] - rot[(2, 0)],
        rot[(1, 0)] - rot[(0, 1)],
    );
    if theta < 1e-9 {
        return anti * 0.5;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near pi the antisymmetric part degenerates; recover the axis from
        // the symmetric part R + I = 2(aa^T - I)...
        let m = (rot + Matrix3::identity()) * 0.5;
        let axis = Vector3::new(m[(0, 0)].max(0.0).sqrt(), m[(1, 1)].max(0.0).sqrt(), m[(2, 2)].max(0.0).sqrt());
        let mut axis = axis;
        // Fix signs from the off-diagonal entries.
        if m[(0, 1)] < 0.0 {
            axis.y = -axis.y;
        }
        if m[(0, 2)] < 0.0 {
            axis.z = -axis.z;
        }
        let n = axis.norm();
        if n > 0.0 {
            return axis / n * theta;
        }
        return Vector3::zeros();
    }
    anti * (theta / (2.0 * theta.sin()))
}

/// Right Jacobian of SO(3): exp(w + dw) ~ exp(w) exp(Jr(w) dw).
pub(crate) fn right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (c1, c2) = if theta2 < 1e-12 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() - c1 * k + c2 * (k * k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn exp_of_zero_is_identity() {
        let p = se3_exp(&[0.0; 6]).unwrap();
        assert_relative_eq!(*p.rotation(), Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(*p.translation(), Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn pure_translation() {
        let p = se3_exp(&[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_relative_eq!(*p.rotation(), Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(*p.translation(), Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn_about_z_rotates_x_to_y() {
        let p = se3_exp(&[0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0]).unwrap();
        let q = p.apply(&Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(q, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn rejects_non_finite_and_out_of_branch_twists() {
        assert!(se3_exp(&[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(se3_exp(&[std::f64::consts::PI, 0.1, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn rotation_is_orthonormal_with_unit_determinant() {
        let p = se3_exp(&[0.3, -0.7, 0.2, 1.0, -2.0, 0.5]).unwrap();
        let r = p.rotation();
        assert_relative_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-9);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rotate_point_jacobian_matches_finite_differences() {
        let twist = [0.3, -0.2, 0.5, 0.0, 0.0, 0.0];
        let p = Vector3::new(0.7, -1.2, 2.3);
        let pose = se3_exp(&twist).unwrap();
        let jac = pose.rotate_point_jacobian(&p);
        let h = 1e-6;
        for axis in 0..3 {
            let mut tp = twist;
            tp[axis] += h;
            let plus = se3_exp(&tp).unwrap().apply(&p);
            tp[axis] -= 2.0 * h;
            let minus = se3_exp(&tp).unwrap().apply(&p);
            let fd = (plus - minus) / (2.0 * h);
            for row in 0..3 {
                assert!(
                    (jac[(row, axis)] - fd[row]).abs() < 1e-6 * (1.0 + fd[row].abs()),
                    "jacobian mismatch at ({row}, {axis}): {} vs {}",
                    jac[(row, axis)],
                    fd[row]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(
            wx in -1.5f64..1.5, wy in -1.5f64..1.5, wz in -1.0f64..1.0,
            tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0,
        ) {
            let omega = Vector3::new(wx, wy, wz);
            prop_assume!(omega.norm() < std::f64::consts::PI - 1e-3);
            let p = se3_exp(&[wx, wy, wz, tx, ty, tz]).unwrap();
            let id = p.compose(&p.inverse());
            prop_assert!((id.rotation() - Matrix3::identity()).norm() < 1e-9);
            prop_assert!(id.translation().norm() < 1e-9);
        }

        #[test]
        fn exp_composed_with_exp_of_negation_is_identity(
            wx in -1.2f64..1.2, wy in -1.2f64..1.2, wz in -1.2f64..1.2,
        ) {
            let omega = Vector3::new(wx, wy, wz);
            prop_assume!(omega.norm() < std::f64::consts::PI - 1e-3);
            // Pure rotations: exp(w) exp(-w) = I. (With the direct-translation
            // convention this holds exactly for the rotation block.)
            let a = se3_exp(&[wx, wy, wz, 0.0, 0.0, 0.0]).unwrap();
            let b = se3_exp(&[-wx, -wy, -wz, 0.0, 0.0, 0.0]).unwrap();
            let id = a.compose(&b);
            prop_assert!((id.rotation() - Matrix3::identity()).norm() < 1e-9);
            prop_assert!(id.translation().norm() < 1e-9);
        }

        #[test]
        fn log_of_exp_recovers_the_twist(
            wx in -1.2f64..1.2, wy in -1.2f64..1.2, wz in -1.2f64..1.2,
        ) {
            let omega = Vector3::new(wx, wy, wz);
            prop_assume!(omega.norm() < std::f64::consts::PI - 1e-2);
            let r = rodrigues(&omega);
            let back = so3_log(&r);
            prop_assert!((back - omega).norm() < 1e-9);
        }
    }
}
