//! Small rigid-body helpers shared across modules.

use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation by the rotation vector `w`.
pub fn so3_exp(w: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*w)
}

/// Rotation vector with angle in `[0, pi]`.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    q.scaled_axis()
}

/// Left Jacobian of SO(3): `exp(w + d) ~ exp(J(w) d) exp(w)` for small `d`.
pub fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-8 {
        return Matrix3::identity() + 0.5 * k;
    }
    let t2 = theta * theta;
    Matrix3::identity() + (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * k * k
}

/// `[x, y, z, qw, qx, qy, qz]`.
pub fn pose_to_array(pose: &Isometry3<f64>) -> [f64; 7] {
    let t = pose.translation.vector;
    let q = pose.rotation;
    [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
}

/// Inverse of [`pose_to_array`]; the quaternion is normalized.
pub fn pose_from_array(a: &[f64]) -> Result<Isometry3<f64>> {
    if a.len() != 7 || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("pose needs 7 finite numbers, got {a:?}")));
    }
    let q = Quaternion::new(a[3], a[4], a[5], a[6]);
    if q.norm() < 1e-12 {
        return Err(Error::invalid("pose quaternion has zero norm"));
    }
    Ok(Isometry3::from_parts(
        Translation3::new(a[0], a[1], a[2]),
        UnitQuaternion::from_quaternion(q),
    ))
}

/// Extrinsic XYZ Euler angles `(rx, ry, rz)` with `R = Rz(rz) Ry(ry) Rx(rx)`.
pub fn euler_xyz(q: &UnitQuaternion<f64>) -> (f64, f64, f64) {
    q.euler_angles()
}

pub fn from_euler_xyz(rx: f64, ry: f64, rz: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(rx, ry, rz)
}

/// Position and orientation distance between two poses (meters, radians).
pub fn pose_error(a: &Isometry3<f64>, b: &Isometry3<f64>) -> (f64, f64) {
    (
        (a.translation.vector - b.translation.vector).norm(),
        a.rotation.angle_to(&b.rotation),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn left_jacobian_matches_finite_difference() {
        let w = Vector3::new(0.4, -0.7, 1.1);
        let jl = left_jacobian(&w);
        let h = 1e-6;
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = h;
            let lhs = so3_exp(&(w + d)) * so3_exp(&w).inverse();
            let col = so3_log(&lhs) / h;
            assert_relative_eq!(col, jl.column(k).into_owned(), epsilon = 1e-5);
        }
    }

    #[test]
    fn pose_array_round_trip() {
        let p = Isometry3::from_parts(Translation3::new(0.1, -0.2, 0.3), from_euler_xyz(0.1, 0.2, -2.5));
        let back = pose_from_array(&pose_to_array(&p)).unwrap();
        let (dp, dr) = pose_error(&p, &back);
        assert!(dp < 1e-15 && dr < 1e-12);
        assert!(pose_from_array(&[0.0; 6]).is_err());
    }

    #[test]
    fn euler_convention_is_extrinsic_xyz() {
        let (rx, ry, rz) = (0.3, -0.2, 1.0);
        let q = from_euler_xyz(rx, ry, rz);
        let expect = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rz)
            * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), ry)
            * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), rx);
        assert!(q.angle_to(&expect) < 1e-12);
        let (a, b, c) = euler_xyz(&q);
        assert_relative_eq!(a, rx, epsilon = 1e-12);
        assert_relative_eq!(b, ry, epsilon = 1e-12);
        assert_relative_eq!(c, rz, epsilon = 1e-12);
    }
}
