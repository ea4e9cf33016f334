//! Small numeric helpers shared across modules.

use nalgebra::{Matrix2, Matrix3, Vector3, Vector4};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Inverse of `sigmoid`. `p` must lie strictly inside (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix from a unit quaternion stored as (w, x, y, z).
pub fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
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

/// Partial derivatives of `quat_to_matrix` with respect to each of (w, x, y, z),
/// valid at any quaternion value (the formula is polynomial).
pub fn quat_to_matrix_jacobian(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    );
    let dy = Matrix3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    );
    let dz = Matrix3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    );
    [dw, dx, dy, dz]
}

/// Largest eigenvalue of a symmetric 2x2 matrix.
pub fn sym2_max_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let half_trace = 0.5 * (a + c);
    let det_part = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    half_trace + det_part
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    #[test]
    fn sigmoid_logit_inverse() {
        for &p in &[1e-6, 0.01, 0.3, 0.5, 0.7, 0.999] {
            assert_relative_eq!(sigmoid(logit(p)), p, epsilon = 1e-12);
        }
    }

    #[test]
    fn quat_matrix_matches_nalgebra() {
        let q = UnitQuaternion::from_euler_angles(0.3, -0.6, 1.1);
        let v = Vector4::new(q.w, q.i, q.j, q.k);
        let m = quat_to_matrix(&v);
        let r = q.to_rotation_matrix();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(m[(i, j)], r[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn quat_jacobian_matches_finite_differences() {
        let q = Vector4::new(0.8, -0.2, 0.5, 0.1);
        let jac = quat_to_matrix_jacobian(&q);
        let h = 1e-6;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fd = (quat_to_matrix(&qp) - quat_to_matrix(&qm)) / (2.0 * h);
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(jac[k][(i, j)], fd[(i, j)], epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn max_eigenvalue_of_diagonal() {
        let m = Matrix2::new(4.0, 0.0, 0.0, 9.0);
        assert_relative_eq!(sym2_max_eigenvalue(&m), 9.0, epsilon = 1e-12);
    }
}
