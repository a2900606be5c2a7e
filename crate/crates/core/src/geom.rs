//! Rigid-motion algebra.
//!
//! Euler convention: `R = Rz(gamma) * Ry(beta) * Rx(alpha)`, i.e. rotate about
//! x first, then y, then z, all about fixed axes. Angles are radians and are
//! kept in `(-pi, pi]`. At gimbal lock (`|beta| = pi/2`) the extraction sets
//! `gamma = 0` and folds the remaining rotation into `alpha`.
//!
//! Quaternions are stored `(w, x, y, z)` and canonicalized to `w >= 0`; when
//! `w == 0` the first non-zero vector component is made positive so that
//! textual round-trips are bit-stable.

use core::f64::consts::PI;
use core::ops::Mul;

use nalgebra::{Matrix3, Matrix4x3, Vector3, Vector4};

use crate::math;

/// Below this value of `cos(beta)` the Euler extraction takes the gimbal-lock branch.
pub const GIMBAL_COS_EPS: f64 = 1e-10;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let two_pi = 2.0 * PI;
    let mut r = a - two_pi * math::floor((a + PI) / two_pi);
    if r <= -PI {
        r += two_pi;
    }
    if r > PI {
        r -= two_pi;
    }
    r
}

/// Six-parameter rigid motion: translation in meters, Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Motion6DoF {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Motion6DoF {
    pub const ZERO: Motion6DoF = Motion6DoF {
        tx: 0.0,
        ty: 0.0,
        tz: 0.0,
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
    };

    /// Builds a motion, wrapping the angles into `(-pi, pi]`.
    pub fn new(tx: f64, ty: f64, tz: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        Motion6DoF {
            tx,
            ty,
            tz,
            alpha: wrap_angle(alpha),
            beta: wrap_angle(beta),
            gamma: wrap_angle(gamma),
        }
    }

    /// Components in the order `tx, ty, tz, alpha, beta, gamma`.
    pub fn to_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.alpha, self.beta, self.gamma]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Motion6DoF::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.tx, self.ty, self.tz)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn to_se3(&self) -> SE3Pose {
        SE3Pose {
            rotation: rotation_from_euler(self.alpha, self.beta, self.gamma),
            translation: self.translation(),
        }
    }

    pub fn from_se3(pose: &SE3Pose) -> Self {
        let (alpha, beta, gamma) = euler_from_rotation(&pose.rotation);
        Motion6DoF {
            tx: pose.translation.x,
            ty: pose.translation.y,
            tz: pose.translation.z,
            alpha,
            beta,
            gamma,
        }
    }
}

pub fn motion_to_se3(m: &Motion6DoF) -> SE3Pose {
    m.to_se3()
}

pub fn se3_to_motion(p: &SE3Pose) -> Motion6DoF {
    Motion6DoF::from_se3(p)
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = (math::sin(a), math::cos(a));
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = (math::sin(a), math::cos(a));
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = (math::sin(a), math::cos(a));
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rotation_from_euler(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    rot_z(gamma) * rot_y(beta) * rot_x(alpha)
}

/// Partial derivatives of [`rotation_from_euler`] with respect to alpha, beta, gamma.
pub fn rotation_euler_derivatives(alpha: f64, beta: f64, gamma: f64) -> [Matrix3<f64>; 3] {
    let (sa, ca) = (math::sin(alpha), math::cos(alpha));
    let (sb, cb) = (math::sin(beta), math::cos(beta));
    let (sg, cg) = (math::sin(gamma), math::cos(gamma));
    let drx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sa, -ca, 0.0, ca, -sa);
    let dry = Matrix3::new(-sb, 0.0, cb, 0.0, 0.0, 0.0, -cb, 0.0, -sb);
    let drz = Matrix3::new(-sg, -cg, 0.0, cg, -sg, 0.0, 0.0, 0.0, 0.0);
    let (rx, ry, rz) = (rot_x(alpha), rot_y(beta), rot_z(gamma));
    [rz * ry * drx, rz * dry * rx, drz * ry * rx]
}

/// Extracts `(alpha, beta, gamma)` from a rotation matrix.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let cos_beta = math::sqrt(r[(0, 0)] * r[(0, 0)] + r[(1, 0)] * r[(1, 0)]);
    let beta = math::atan2(-r[(2, 0)], cos_beta);
    if cos_beta > GIMBAL_COS_EPS {
        let alpha = math::atan2(r[(2, 1)], r[(2, 2)]);
        let gamma = math::atan2(r[(1, 0)], r[(0, 0)]);
        (wrap_angle(alpha), wrap_angle(beta), wrap_angle(gamma))
    } else {
        // beta = +-pi/2: only alpha -+ gamma is observable; gamma := 0.
        let sin_beta = -r[(2, 0)].signum();
        let alpha = math::atan2(sin_beta * r[(0, 1)], r[(1, 1)]);
        let beta = sin_beta * PI / 2.0;
        (wrap_angle(alpha), beta, 0.0)
    }
}

/// Rodrigues' formula: rotation matrix of the rotation vector `omega`.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = omega.cross_matrix();
    if theta2 < 1e-16 {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let theta = math::sqrt(theta2);
    let a = math::sin(theta) / theta;
    let b = (1.0 - math::cos(theta)) / theta2;
    Matrix3::identity() + a * k + b * k * k
}

/// Geodesic angle of a rotation matrix in radians, in `[0, pi]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // atan2 form stays accurate near 0 and pi where acos of the trace is not.
    let sin_part = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
    .norm();
    let cos_part = r.trace() - 1.0;
    math::atan2(sin_part, cos_part)
}

/// Unit quaternion `(w, x, y, z)` with canonical sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes arbitrary components. Returns `None` for a zero vector.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = math::sqrt(w * w + x * x + y * y + z * z);
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        Some(UnitQuat {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
        .canonical())
    }

    /// Keeps components as given apart from the sign canonicalization.
    pub fn from_components_unchecked(w: f64, x: f64, y: f64, z: f64) -> Self {
        UnitQuat { w, x, y, z }
    }

    fn needs_flip(&self) -> bool {
        if self.w != 0.0 {
            return self.w < 0.0;
        }
        for c in [self.x, self.y, self.z] {
            if c != 0.0 {
                return c < 0.0;
            }
        }
        false
    }

    pub fn canonical(self) -> Self {
        if self.needs_flip() {
            self.negated()
        } else {
            self
        }
    }

    pub fn negated(self) -> Self {
        UnitQuat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
    }

    pub fn dot(&self, o: &UnitQuat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Components as a 4-vector `(w, x, y, z)`.
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn from_euler(alpha: f64, beta: f64, gamma: f64) -> Self {
        let (sa, ca) = (math::sin(alpha / 2.0), math::cos(alpha / 2.0));
        let (sb, cb) = (math::sin(beta / 2.0), math::cos(beta / 2.0));
        let (sc, cc) = (math::sin(gamma / 2.0), math::cos(gamma / 2.0));
        UnitQuat {
            w: ca * cb * cc + sa * sb * sc,
            x: sa * cb * cc - ca * sb * sc,
            y: ca * sb * cc + sa * cb * sc,
            z: ca * cb * sc - sa * sb * cc,
        }
        .canonical()
    }

    /// Jacobian of [`UnitQuat::from_euler`] (canonical sign included) as a
    /// 4x3 matrix, rows `(w, x, y, z)`, columns `(alpha, beta, gamma)`.
    pub fn euler_jacobian(alpha: f64, beta: f64, gamma: f64) -> Matrix4x3<f64> {
        let (sa, ca) = (math::sin(alpha / 2.0), math::cos(alpha / 2.0));
        let (sb, cb) = (math::sin(beta / 2.0), math::cos(beta / 2.0));
        let (sc, cc) = (math::sin(gamma / 2.0), math::cos(gamma / 2.0));
        let raw = UnitQuat {
            w: ca * cb * cc + sa * sb * sc,
            x: sa * cb * cc - ca * sb * sc,
            y: ca * sb * cc + sa * cb * sc,
            z: ca * cb * sc - sa * sb * cc,
        };
        let sign = if raw.needs_flip() { -0.5 } else { 0.5 };
        #[rustfmt::skip]
        let j = Matrix4x3::new(
            -sa * cb * cc + ca * sb * sc, -ca * sb * cc + sa * cb * sc, -ca * cb * sc + sa * sb * cc,
            ca * cb * cc + sa * sb * sc,  -sa * sb * cc - ca * cb * sc, -sa * cb * sc - ca * sb * cc,
            -sa * sb * cc + ca * cb * sc, ca * cb * cc - sa * sb * sc,  -ca * sb * sc + sa * cb * cc,
            -sa * cb * sc - ca * sb * cc, -ca * sb * sc - sa * cb * cc, ca * cb * cc + sa * sb * sc,
        );
        j * sign
    }

    pub fn to_euler(&self) -> (f64, f64, f64) {
        euler_from_rotation(&self.to_rotation_matrix())
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
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

    /// Shepperd's method; picks the numerically largest pivot.
    pub fn from_rotation_matrix(r: &Matrix3<f64>) -> Self {
        let trace = r.trace();
        let (w, x, y, z);
        if trace > r[(0, 0)] && trace > r[(1, 1)] && trace > r[(2, 2)] {
            let s = 2.0 * math::sqrt(1.0 + trace);
            w = 0.25 * s;
            x = (r[(2, 1)] - r[(1, 2)]) / s;
            y = (r[(0, 2)] - r[(2, 0)]) / s;
            z = (r[(1, 0)] - r[(0, 1)]) / s;
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = 2.0 * math::sqrt((1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).max(0.0));
            w = (r[(2, 1)] - r[(1, 2)]) / s;
            x = 0.25 * s;
            y = (r[(0, 1)] + r[(1, 0)]) / s;
            z = (r[(0, 2)] + r[(2, 0)]) / s;
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = 2.0 * math::sqrt((1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).max(0.0));
            w = (r[(0, 2)] - r[(2, 0)]) / s;
            x = (r[(0, 1)] + r[(1, 0)]) / s;
            y = 0.25 * s;
            z = (r[(1, 2)] + r[(2, 1)]) / s;
        } else {
            let s = 2.0 * math::sqrt((1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).max(0.0));
            w = (r[(1, 0)] - r[(0, 1)]) / s;
            x = (r[(0, 2)] + r[(2, 0)]) / s;
            y = (r[(1, 2)] + r[(2, 1)]) / s;
            z = 0.25 * s;
        }
        UnitQuat::new_normalize(w, x, y, z).unwrap_or(UnitQuat::IDENTITY)
    }
}

impl Mul for UnitQuat {
    type Output = UnitQuat;

    /// Hamilton product; the result is not canonicalized.
    fn mul(self, o: UnitQuat) -> UnitQuat {
        UnitQuat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }
}

pub fn quat_from_euler(alpha: f64, beta: f64, gamma: f64) -> UnitQuat {
    UnitQuat::from_euler(alpha, beta, gamma)
}

pub fn euler_from_quat(q: &UnitQuat) -> (f64, f64, f64) {
    q.to_euler()
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SE3Pose {
    fn default() -> Self {
        SE3Pose::identity()
    }
}

impl SE3Pose {
    pub fn identity() -> Self {
        SE3Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        SE3Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        SE3Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_quat_translation(q: &UnitQuat, t: Vector3<f64>) -> Self {
        SE3Pose {
            rotation: q.to_rotation_matrix(),
            translation: t,
        }
    }

    pub fn quaternion(&self) -> UnitQuat {
        UnitQuat::from_rotation_matrix(&self.rotation)
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rt = self.rotation.transpose();
        SE3Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self^-1 * other`, the pose of `other` expressed in `self`'s frame.
    pub fn between(&self, other: &SE3Pose) -> SE3Pose {
        let rt = self.rotation.transpose();
        SE3Pose {
            rotation: rt * other.rotation,
            translation: rt * (other.translation - self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Projects the rotation onto SO(3) (closest orthonormal matrix, det +1).
    pub fn orthonormalized(&self) -> SE3Pose {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut d = Matrix3::identity();
            d[(2, 2)] = -1.0;
            r = u * d * v_t;
        }
        SE3Pose {
            rotation: r,
            translation: self.translation,
        }
    }

    /// Largest deviation of `R^T R` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    /// Max-abs difference over the 3x4 matrix entries.
    pub fn max_abs_diff(&self, o: &SE3Pose) -> f64 {
        (self.rotation - o.rotation)
            .amax()
            .max((self.translation - o.translation).amax())
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major_3x4(v: &[f64; 12]) -> SE3Pose {
        SE3Pose {
            rotation: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vector3::new(v[3], v[7], v[11]),
        }
    }
}

impl Mul for SE3Pose {
    type Output = SE3Pose;
    fn mul(self, rhs: SE3Pose) -> SE3Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a SE3Pose> for &'a SE3Pose {
    type Output = SE3Pose;
    fn mul(self, rhs: &'a SE3Pose) -> SE3Pose {
        self.compose(rhs)
    }
}

pub fn compose(a: &SE3Pose, b: &SE3Pose) -> SE3Pose {
    a.compose(b)
}

pub fn inverse(p: &SE3Pose) -> SE3Pose {
    p.inverse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_motion(rng: &mut ChaCha8Rng, beta_limit: f64) -> Motion6DoF {
        Motion6DoF::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-PI..PI),
            rng.random_range(-beta_limit..beta_limit),
            rng.random_range(-PI..PI),
        )
    }

    fn motion_diff(a: &Motion6DoF, b: &Motion6DoF) -> f64 {
        let (x, y) = (a.to_array(), b.to_array());
        (0..6)
            .map(|i| {
                let d = x[i] - y[i];
                if i >= 3 {
                    wrap_angle(d).abs()
                } else {
                    d.abs()
                }
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_motion_is_identity() {
        let p = Motion6DoF::ZERO.to_se3();
        assert_eq!(p, SE3Pose::identity());
        assert_eq!(Motion6DoF::from_se3(&SE3Pose::identity()), Motion6DoF::ZERO);
    }

    #[test]
    fn gamma_quarter_turn_maps_x_to_y() {
        let p = Motion6DoF::new(0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2).to_se3();
        let y = p.transform_point(&Vector3::new(1.0, 0.0, 0.0));
        assert!((y - Vector3::new(0.0, 1.0, 0.0)).amax() < 1e-15);
        assert_eq!(p.translation, Vector3::zeros());
    }

    #[test]
    fn euler_round_trip_away_from_gimbal_lock() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let limit = FRAC_PI_2 - 1e-3;
        for _ in 0..10_000 {
            let m = random_motion(&mut rng, limit);
            let back = Motion6DoF::from_se3(&m.to_se3());
            assert!(motion_diff(&m, &back) < 1e-12, "{m:?} vs {back:?}");
        }
    }

    #[test]
    fn se3_round_trip_through_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let p = random_motion(&mut rng, FRAC_PI_2).to_se3();
            let back = Motion6DoF::from_se3(&p).to_se3();
            assert!(p.max_abs_diff(&back) < 1e-9);
        }
    }

    #[test]
    fn gimbal_lock_sets_gamma_zero() {
        for (alpha, gamma, sign) in [(0.3, 0.2, 1.0), (-1.0, 0.7, -1.0), (2.0, -2.5, 1.0)] {
            let r = rotation_from_euler(alpha, sign * FRAC_PI_2, gamma);
            let (a, b, g) = euler_from_rotation(&r);
            assert_eq!(g, 0.0);
            assert_eq!(b, sign * FRAC_PI_2);
            let back = rotation_from_euler(a, b, g);
            assert!((back - r).amax() < 1e-12);
            // alpha absorbs gamma: alpha - gamma at +pi/2, alpha + gamma at -pi/2.
            let expected = wrap_angle(if sign > 0.0 { alpha - gamma } else { alpha + gamma });
            assert!(wrap_angle(a - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = random_motion(&mut rng, FRAC_PI_2).to_se3();
            assert_eq!(p.compose(&SE3Pose::identity()), p);
            assert!(p.compose(&p.inverse()).max_abs_diff(&SE3Pose::identity()) < 1e-9);
            assert!(p.inverse().inverse().max_abs_diff(&p) < 1e-12);
        }
    }

    #[test]
    fn inverse_of_pure_translation() {
        let t = Vector3::new(1.0, -2.0, 3.0);
        let p = SE3Pose::from_translation(t).inverse();
        assert_eq!(p.rotation, Matrix3::identity());
        assert_eq!(p.translation, -t);
        assert_eq!(SE3Pose::identity().inverse(), SE3Pose::identity());
    }

    #[test]
    fn long_compose_chain_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut raw = SE3Pose::identity();
        let mut clean = SE3Pose::identity();
        for _ in 0..1000 {
            let step = random_motion(&mut rng, FRAC_PI_2).to_se3();
            raw = raw.compose(&step);
            clean = clean.compose(&step).orthonormalized();
        }
        assert!(raw.orthonormality_error() < 1e-6);
        assert!(clean.orthonormality_error() < 1e-12);
        assert!((raw.orthonormalized().rotation - clean.rotation).amax() < 1e-6);
    }

    #[test]
    fn quaternion_reference_values() {
        assert_eq!(UnitQuat::from_euler(0.0, 0.0, 0.0), UnitQuat::IDENTITY);
        let q = UnitQuat::from_euler(0.0, 0.0, PI);
        assert!(q.w.abs() < 1e-15 && q.w >= 0.0);
        assert!((q.z - 1.0).abs() < 1e-15 && q.x == 0.0 && q.y == 0.0);
        let flipped = UnitQuat::from_components_unchecked(0.0, 0.0, 0.0, -1.0).canonical();
        assert_eq!(flipped.z, 1.0);
    }

    #[test]
    fn quaternion_and_euler_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let m = random_motion(&mut rng, FRAC_PI_2 - 1e-3);
            let q = UnitQuat::from_euler(m.alpha, m.beta, m.gamma);
            assert!(q.w >= 0.0);
            assert!((q.norm() - 1.0).abs() < 1e-12);
            let r_e = rotation_from_euler(m.alpha, m.beta, m.gamma);
            assert!((q.to_rotation_matrix() - r_e).amax() < 1e-12);
            let (a, b, g) = q.to_euler();
            assert!(motion_diff(&m, &Motion6DoF { alpha: a, beta: b, gamma: g, ..m }) < 1e-12);
            let q2 = UnitQuat::from_rotation_matrix(&r_e);
            assert!((q2.as_vector() - q.as_vector()).amax() < 1e-12);
        }
    }

    #[test]
    fn quaternion_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-6;
        for _ in 0..200 {
            let m = random_motion(&mut rng, 1.4);
            let q0 = UnitQuat::from_euler(m.alpha, m.beta, m.gamma);
            if q0.w < 1e-3 {
                continue;
            }
            let j = UnitQuat::euler_jacobian(m.alpha, m.beta, m.gamma);
            for c in 0..3 {
                let mut plus = [m.alpha, m.beta, m.gamma];
                let mut minus = plus;
                plus[c] += h;
                minus[c] -= h;
                let qp = UnitQuat::from_euler(plus[0], plus[1], plus[2]).as_vector();
                let qm = UnitQuat::from_euler(minus[0], minus[1], minus[2]).as_vector();
                let fd = (qp - qm) / (2.0 * h);
                assert!((fd - j.column(c)).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn rotation_derivatives_match_central_differences() {
        let (a, b, g) = (0.3, -0.7, 1.9);
        let d = rotation_euler_derivatives(a, b, g);
        let h = 1e-6;
        let f = |x: [f64; 3]| rotation_from_euler(x[0], x[1], x[2]);
        for c in 0..3 {
            let mut p = [a, b, g];
            let mut m = p;
            p[c] += h;
            m[c] -= h;
            let fd = (f(p) - f(m)) / (2.0 * h);
            assert!((fd - d[c]).amax() < 1e-8);
        }
    }

    #[test]
    fn exp_and_angle_agree() {
        let w = Vector3::new(0.1, -0.4, 0.25);
        let r = so3_exp(&w);
        assert!((rotation_angle(&r) - w.norm()).abs() < 1e-14);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert!((rotation_angle(&rot_z(PI)) - PI).abs() < 1e-15);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5 - 4.0 * PI) + 0.5).abs() < 1e-12);
    }
}
