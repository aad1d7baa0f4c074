//! Axis-angle rotations.
//!
//! Small helpers around the exponential map of SO(3). The left Jacobian is
//! what the pose gradient needs: for `R = exp([r]x)`,
//! `dR/dr_c * R^T = [J_l(r) e_c]x`, so a perturbation of the axis-angle
//! component `c` rotates everything downstream about the world-frame axis
//! `J_l(r) e_c`.

use nalgebra::{Matrix3, Vector3};

/// Below this rotation angle the closed forms are replaced by their series.
pub const SMALL_ANGLE: f64 = 1e-8;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula. Returns the identity bit-exactly for a zero vector.
pub fn exp(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    let k = skew(r);
    if theta < SMALL_ANGLE {
        if theta == 0.0 {
            return Matrix3::identity();
        }
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Left Jacobian of SO(3) at `r`.
pub fn left_jacobian(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    let k = skew(r);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let t2 = theta * theta;
    let a = (1.0 - theta.cos()) / t2;
    let b = (theta - theta.sin()) / (t2 * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Inverse of [`exp`], returning a vector with norm in `[0, pi]`.
pub fn log(m: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let w = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    if theta < 1e-6 {
        return 0.5 * w;
    }
    if std::f64::consts::PI - theta < 1e-4 {
        // Near pi the antisymmetric part vanishes; read the axis from the
        // symmetric part instead.
        let s = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
        let mut best = 0;
        for i in 1..3 {
            if s[(i, i)] > s[(best, best)] {
                best = i;
            }
        }
        let mut axis: Vector3<f64> = s.column(best).into();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / (2.0 * theta.sin()))
}

/// Maps an axis-angle vector to the equivalent one with norm below pi.
pub fn canonicalize(r: &Vector3<f64>) -> Vector3<f64> {
    let theta = r.norm();
    if theta < std::f64::consts::PI {
        return *r;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let wrapped = theta.rem_euclid(two_pi);
    let axis = r / theta;
    if wrapped > std::f64::consts::PI {
        axis * (wrapped - two_pi)
    } else {
        axis * wrapped
    }
}

/// Angle of the relative rotation between two axis-angle vectors, radians.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let rel = exp(a).transpose() * exp(b);
    log(&rel).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_is_identity_exactly() {
        assert_eq!(exp(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = exp(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let x = r * Vector3::x();
        assert_relative_eq!(x, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn log_inverts_exp() {
        for r in [
            Vector3::new(0.3, -0.2, 0.9),
            Vector3::new(1e-9, 0.0, 0.0),
            Vector3::new(0.0, 3.1, 0.0),
            Vector3::new(-2.0, 1.0, 0.5),
        ] {
            assert_relative_eq!(log(&exp(&r)), r, epsilon = 1e-8);
        }
    }

    #[test]
    fn left_jacobian_matches_finite_difference() {
        let r = Vector3::new(0.4, -1.1, 0.7);
        let rot = exp(&r);
        let jl = left_jacobian(&r);
        let h = 1e-6;
        for c in 0..3 {
            let mut rp = r;
            let mut rm = r;
            rp[c] += h;
            rm[c] -= h;
            let d = (exp(&rp) - exp(&rm)) / (2.0 * h);
            let omega = d * rot.transpose();
            let expected = skew(&(jl * Vector3::ith(c, 1.0)));
            assert_relative_eq!(omega, expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn canonicalize_keeps_rotation() {
        let r = Vector3::new(0.0, 0.0, 4.0);
        let c = canonicalize(&r);
        assert!(c.norm() < std::f64::consts::PI);
        assert_relative_eq!(exp(&c), exp(&r), epsilon = 1e-12);
    }
}
