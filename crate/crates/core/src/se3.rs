//! Rigid-body transforms on SE(3) and the Lie-algebra machinery the rest of
//! the toolkit builds on.
//!
//! Conventions:
//! - A pose is a rotation matrix plus a translation vector, acting on points
//!   as `p' = R p + t`.
//! - Tangent vectors are ordered `[rho; phi]` (translational part first,
//!   rotational part second), so `exp` of a tangent produces the rotation
//!   `exp(phi^)` and the translation `Jl(phi) rho`.
//! - `so3_log` goes through a unit quaternion, which stays accurate for
//!   rotations all the way out to half a turn.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use thiserror::Error;

/// Orthonormality tolerance enforced on internally constructed poses.
pub const ROTATION_TOL: f64 = 1e-9;

/// Looser tolerance applied to rotations read from external files, where a
/// dozen printed decimal digits are the best a writer can do.
pub const ROTATION_TOL_EXTERNAL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum Se3Error {
    #[error("rotation is not orthonormal: max |R^T R - I| = {0:.3e}")]
    NotOrthonormal(f64),
    #[error("matrix is a reflection or worse: det = {0:.6}")]
    ImproperRotation(f64),
}

/// A rigid transform: orthonormal rotation with positive determinant plus a
/// translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl PoseSE3 {
    /// Builds a pose, enforcing orthonormality within [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, Se3Error> {
        Self::with_tolerance(rotation, translation, ROTATION_TOL)
    }

    /// Builds a pose, enforcing orthonormality within a caller-chosen
    /// tolerance. Reflections are rejected regardless of tolerance.
    pub fn with_tolerance(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tol: f64,
    ) -> Result<Self, Se3Error> {
        if rotation.iter().any(|v| !v.is_finite()) {
            return Err(Se3Error::NotOrthonormal(f64::NAN));
        }
        let err = orthonormality_error(&rotation);
        if err > tol {
            return Err(Se3Error::NotOrthonormal(err));
        }
        let det = rotation.determinant();
        if !(det > 0.0) {
            return Err(Se3Error::ImproperRotation(det));
        }
        Ok(Self { rotation, translation })
    }

    /// Internal constructor for matrices that are rotations by construction
    /// (exponential map, products of validated rotations).
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self * other`, i.e. apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        so3_log(&self.rotation).norm()
    }
}

impl std::ops::Mul for PoseSE3 {
    type Output = PoseSE3;
    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

impl std::ops::Mul for &PoseSE3 {
    type Output = PoseSE3;
    fn mul(self, rhs: &PoseSE3) -> PoseSE3 {
        self.compose(rhs)
    }
}

/// Largest absolute entry of `R^T R - I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    gram.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Skew-symmetric cross-product matrix of `v`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation-vector exponential (Rodrigues), with series fallbacks for small
/// angles.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let (a, b) = sin_cos_coeffs(theta2);
    let k = hat(phi);
    Matrix3::identity() + k * a + k * k * b
}

/// Returns `(sin t / t, (1 - cos t)/t^2)` given `t^2`, safe at zero.
fn sin_cos_coeffs(theta2: f64) -> (f64, f64) {
    if theta2 < 1e-8 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    }
}

/// Rotation-matrix logarithm via Shepperd's quaternion extraction, returning
/// the rotation vector with angle in `[0, pi]`.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    // Extract a unit quaternion choosing the numerically largest component
    // as the pivot, then convert: log R = 2 atan2(|v|, w) * v / |v|.
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let (mut w, mut x, mut y, mut z);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    w /= norm;
    x /= norm;
    y /= norm;
    z /= norm;
    if w < 0.0 {
        w = -w;
        x = -x;
        y = -y;
        z = -z;
    }
    let v = Vector3::new(x, y, z);
    let s = v.norm();
    let factor = if s < 1e-9 {
        // atan2(s, w)/s expanded around s = 0 (w is ~1 here).
        2.0 / w - 2.0 * s * s / (3.0 * w * w * w)
    } else {
        2.0 * s.atan2(w) / s
    };
    v * factor
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    let (b, c) = if theta2 < 1e-8 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + k * b + k * k * c
}

/// Inverse of the left Jacobian of SO(3). Valid for angles below a full turn.
pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    let c = if theta2 < 1e-8 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        let half = theta / 2.0;
        (1.0 - half * half.cos() / half.sin()) / theta2
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

/// Exponential map of SE(3) for a `[rho; phi]` tangent vector.
pub fn se3_exp(xi: &Vector6<f64>) -> PoseSE3 {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    let rotation = so3_exp(&phi);
    let translation = so3_left_jacobian(&phi) * rho;
    PoseSE3::from_parts_unchecked(rotation, translation)
}

/// Logarithm map of SE(3), inverse of [`se3_exp`].
pub fn se3_log(t: &PoseSE3) -> Vector6<f64> {
    let phi = so3_log(t.rotation());
    let rho = so3_left_jacobian_inv(&phi) * t.translation();
    let mut xi = Vector6::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&rho);
    xi.fixed_rows_mut::<3>(3).copy_from(&phi);
    xi
}

/// Adjoint matrix of a pose, mapping tangents between frames:
/// `Exp(Ad(T) xi) = T Exp(xi) T^-1`.
pub fn adjoint(t: &PoseSE3) -> Matrix6<f64> {
    let r = t.rotation();
    let th = hat(t.translation()) * r;
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&th);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    ad
}

/// The translation-rotation coupling block of the SE(3) left Jacobian.
fn se3_q_block(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let rh = hat(rho);
    let ph = hat(phi);
    let theta2 = phi.norm_squared();
    let (c1, c2, c3) = if theta2 < 1e-6 {
        (
            1.0 / 6.0 - theta2 / 120.0,
            1.0 / 24.0 - theta2 / 720.0,
            1.0 / 120.0 - theta2 / 2520.0,
        )
    } else {
        let theta = theta2.sqrt();
        let (s, c) = theta.sin_cos();
        (
            (theta - s) / (theta2 * theta),
            (theta2 + 2.0 * c - 2.0) / (2.0 * theta2 * theta2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta2 * theta2 * theta),
        )
    };
    rh * 0.5
        + (ph * rh + rh * ph + ph * rh * ph) * c1
        + (ph * ph * rh + rh * ph * ph - ph * rh * ph * 3.0) * c2
        + (ph * rh * ph * ph + ph * ph * rh * ph) * c3
}

/// Inverse of the right Jacobian of SE(3) at `xi`, the linearization used by
/// on-manifold Gauss-Newton updates.
pub fn se3_right_jacobian_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    // Jr(xi) = Jl(-xi), so build the left-Jacobian inverse blocks at -xi.
    let rho = -xi.fixed_rows::<3>(0).into_owned();
    let phi = -xi.fixed_rows::<3>(3).into_owned();
    let jli = so3_left_jacobian_inv(&phi);
    let q = se3_q_block(&rho, &phi);
    let top_right = -jli * q * jli;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jli);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&top_right);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jli);
    out
}
