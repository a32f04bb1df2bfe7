//! Rotation algebra: the continuous 6D encoding, rotation matrices and
//! unit quaternions.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Two 3-vectors (the first two columns of a rotation matrix), flattened.
pub type Rot6d = [f64; 6];

const DEGENERATE_NORM: f64 = 1e-8;

/// Gram-Schmidt on the two column vectors, third column by cross product.
pub fn rot6d_to_matrix(r: &Rot6d) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if !(n1 >= DEGENERATE_NORM) {
        return Err(Error::DegenerateRotation(format!(
            "first column has norm {n1:e}"
        )));
    }
    let b1 = a1 / n1;
    let ortho = a2 - b1 * b1.dot(&a2);
    let n2 = ortho.norm();
    if !(n2 >= DEGENERATE_NORM) {
        return Err(Error::DegenerateRotation(format!(
            "columns are parallel (residual norm {n2:e})"
        )));
    }
    let b2 = ortho / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// Max absolute entry of `RᵀR − I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

pub fn matrix_to_rot6d(r: &Matrix3<f64>) -> Result<Rot6d> {
    let err = orthonormality_error(r);
    if !(err <= 1e-4) || r.determinant() <= 0.0 {
        return Err(Error::NotARotation(err));
    }
    Ok([
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ])
}

/// Re-projects a raw 6D block onto the rotation manifold.
pub fn orthonormalize_rot6d(r: &Rot6d) -> Result<Rot6d> {
    matrix_to_rot6d(&rot6d_to_matrix(r)?)
}

pub fn matrix_to_quaternion(r: &Matrix3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r))
}

pub fn quaternion_to_matrix(q: &UnitQuaternion<f64>) -> Matrix3<f64> {
    q.to_rotation_matrix().into_inner()
}

pub fn rot6d_to_quaternion(r: &Rot6d) -> Result<UnitQuaternion<f64>> {
    Ok(matrix_to_quaternion(&rot6d_to_matrix(r)?))
}

pub fn quaternion_to_rot6d(q: &UnitQuaternion<f64>) -> Rot6d {
    let m = quaternion_to_matrix(q);
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Shortest-arc spherical interpolation from `q0` (t = 0) to `q1` (t = 1).
///
/// Nearly parallel inputs fall back to normalized linear interpolation.
pub fn quaternion_slerp(q0: &UnitQuaternion<f64>, q1: &UnitQuaternion<f64>, t: f64) -> UnitQuaternion<f64> {
    let a = q0.into_inner().coords;
    let mut b = q1.into_inner().coords;
    let mut dot = a.dot(&b);
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    if t <= 0.0 {
        return *q0;
    }
    if t >= 1.0 {
        return UnitQuaternion::new_normalize(Quaternion::from(b));
    }
    let coords = if dot > 1.0 - 1e-7 {
        a * (1.0 - t) + b * t
    } else {
        let theta = dot.min(1.0).acos();
        let sin_theta = theta.sin();
        a * (((1.0 - t) * theta).sin() / sin_theta) + b * ((t * theta).sin() / sin_theta)
    };
    UnitQuaternion::new_normalize(Quaternion::from(coords))
}

/// Rotation angle (radians) between two orientations.
pub fn angle_between(q0: &UnitQuaternion<f64>, q1: &UnitQuaternion<f64>) -> f64 {
    q0.angle_to(q1)
}
