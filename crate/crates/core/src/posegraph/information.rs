//! Edge uncertainty: the diagonal 6-parameter covariance and its conversion
//! into a 7x7 information matrix over `(t, quaternion)`.

use nalgebra::{Matrix6, SMatrix};

use super::PoseGraphError;
use crate::geom::{Motion6DoF, UnitQuat};

pub type Matrix7 = SMatrix<f64, 7, 7>;
pub type Matrix7x6 = SMatrix<f64, 7, 6>;

/// Regularizer added before a plain inverse in [`InverseMode::Ridge`].
pub const RIDGE_EPS: f64 = 1e-10;
/// Relative singular-value cutoff of the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-12;

/// Per-axis standard deviations of a relative motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaParams {
    pub sigma_tx: f64,
    pub sigma_ty: f64,
    pub sigma_tz: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub sigma_gamma: f64,
}

impl SigmaParams {
    pub fn uniform(sigma_t: f64, sigma_rot: f64) -> Self {
        SigmaParams {
            sigma_tx: sigma_t,
            sigma_ty: sigma_t,
            sigma_tz: sigma_t,
            sigma_alpha: sigma_rot,
            sigma_beta: sigma_rot,
            sigma_gamma: sigma_rot,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.sigma_tx,
            self.sigma_ty,
            self.sigma_tz,
            self.sigma_alpha,
            self.sigma_beta,
            self.sigma_gamma,
        ]
    }

    pub fn validate(&self) -> Result<(), PoseGraphError> {
        if self.to_array().iter().all(|s| *s > 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(PoseGraphError::InvalidParameter("all sigmas must be positive"))
        }
    }
}

impl Default for SigmaParams {
    fn default() -> Self {
        SigmaParams::uniform(0.02, 0.002)
    }
}

/// Graph hyperparameters: covariance scale, rotation scale and loop threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub c_si: f64,
    pub c_r: f64,
    pub t_loop: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            c_si: 10000.0,
            c_r: 1.0,
            t_loop: 50,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), PoseGraphError> {
        if !(self.c_si > 0.0 && self.c_si.is_finite()) {
            return Err(PoseGraphError::InvalidParameter("C_si must be positive"));
        }
        if !(self.c_r > 0.0 && self.c_r.is_finite()) {
            return Err(PoseGraphError::InvalidParameter("C_r must be positive"));
        }
        if self.t_loop < 1 {
            return Err(PoseGraphError::InvalidParameter("T_loop must be at least 1"));
        }
        Ok(())
    }
}

/// `C_si * diag(s_tx^2, s_ty^2, s_tz^2, C_r s_alpha^2, C_r s_beta^2, C_r s_gamma^2)`.
pub fn covariance_q(sigmas: &SigmaParams, hp: &HyperParams) -> Matrix6<f64> {
    let s = sigmas.to_array();
    let mut q = Matrix6::zeros();
    for k in 0..6 {
        let rot = if k >= 3 { hp.c_r } else { 1.0 };
        q[(k, k)] = hp.c_si * rot * s[k] * s[k];
    }
    q
}

/// How the rank-deficient 7x7 covariance is inverted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InverseMode {
    /// Moore-Penrose pseudo-inverse with relative cutoff [`PINV_CUTOFF`].
    #[default]
    PseudoInverse,
    /// Plain inverse of `J Q J^T + RIDGE_EPS * I`.
    Ridge,
}

/// Jacobian of `(t, q(alpha, beta, gamma))` with respect to `(t, alpha, beta, gamma)`.
pub fn parametrization_jacobian(lin: &Motion6DoF) -> Matrix7x6 {
    let mut j = Matrix7x6::zeros();
    for k in 0..3 {
        j[(k, k)] = 1.0;
    }
    j.fixed_view_mut::<4, 3>(3, 3)
        .copy_from(&UnitQuat::euler_jacobian(lin.alpha, lin.beta, lin.gamma));
    j
}

fn symmetrize(m: &Matrix7) -> Matrix7 {
    0.5 * (m + m.transpose())
}

/// Information matrix `(J Q J^T)^+` of an edge measured at `lin`.
pub fn information_from_q(q: &Matrix6<f64>, lin: &Motion6DoF, mode: InverseMode) -> Result<Matrix7, PoseGraphError> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(PoseGraphError::NotPsd);
    }
    let qs = 0.5 * (q + q.transpose());
    let eig = qs.symmetric_eigenvalues();
    let scale = eig.amax().max(f64::MIN_POSITIVE);
    if eig.min() < -1e-9 * scale.max(1.0) {
        return Err(PoseGraphError::NotPsd);
    }
    let j = parametrization_jacobian(lin);
    let cov7 = symmetrize(&(j * qs * j.transpose()));
    let info = match mode {
        InverseMode::PseudoInverse => {
            let se = cov7.symmetric_eigen();
            let cutoff = PINV_CUTOFF * se.eigenvalues.amax();
            let mut inv_vals = se.eigenvalues;
            for v in inv_vals.iter_mut() {
                *v = if *v > cutoff { 1.0 / *v } else { 0.0 };
            }
            se.eigenvectors * Matrix7::from_diagonal(&inv_vals) * se.eigenvectors.transpose()
        }
        InverseMode::Ridge => (cov7 + Matrix7::identity() * RIDGE_EPS)
            .try_inverse()
            .ok_or(PoseGraphError::NotPsd)?,
    };
    Ok(symmetrize(&info))
}

/// Map from the 6 tangent coordinates `(t, qx, qy, qz)` at `q` to the 7-vector
/// `(t, qw, qx, qy, qz)`, to first order on the unit sphere.
pub fn tangent_basis(q: &UnitQuat) -> Matrix7x6 {
    let mut b = Matrix7x6::zeros();
    for k in 0..3 {
        b[(k, k)] = 1.0;
    }
    let w = q.w.max(1e-12);
    b[(3, 3)] = -q.x / w;
    b[(3, 4)] = -q.y / w;
    b[(3, 5)] = -q.z / w;
    for k in 0..3 {
        b[(4 + k, 3 + k)] = 1.0;
    }
    b
}

/// Expresses a 7x7 information matrix in the 6 coordinates `(t, qx, qy, qz)`.
pub fn information_to_minimal(info: &Matrix7, q: &UnitQuat) -> Matrix6<f64> {
    let b = tangent_basis(q);
    let m = b.transpose() * info * b;
    0.5 * (m + m.transpose())
}

/// Inverse of [`information_to_minimal`] for information matrices whose null
/// space is the quaternion direction.
pub fn information_from_minimal(info6: &Matrix6<f64>, q: &UnitQuat) -> Matrix7 {
    let b = tangent_basis(q);
    let btb = b.transpose() * b;
    let left = btb.try_inverse().unwrap_or_else(Matrix6::identity) * b.transpose();
    symmetrize(&(left.transpose() * info6 * left))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_covariance() {
        let hp = HyperParams {
            c_si: 1.0,
            c_r: 1.0,
            t_loop: 1,
        };
        assert_eq!(covariance_q(&SigmaParams::uniform(1.0, 1.0), &hp), Matrix6::identity());
    }

    #[test]
    fn doubling_sigmas_quadruples_q() {
        let s = SigmaParams {
            sigma_tx: 0.1,
            sigma_ty: 0.2,
            sigma_tz: 0.3,
            sigma_alpha: 0.01,
            sigma_beta: 0.02,
            sigma_gamma: 0.03,
        };
        let d = SigmaParams {
            sigma_tx: 0.2,
            sigma_ty: 0.4,
            sigma_tz: 0.6,
            sigma_alpha: 0.02,
            sigma_beta: 0.04,
            sigma_gamma: 0.06,
        };
        let hp = HyperParams::default();
        let (a, b) = (covariance_q(&s, &hp), covariance_q(&d, &hp));
        assert!((b - 4.0 * a).amax() < 1e-15 * b.amax());
        for r in 0..6 {
            for c in 0..6 {
                if r != c {
                    assert_eq!(a[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn translation_block_is_inverse_of_q_translation_block() {
        let s = SigmaParams {
            sigma_tx: 0.1,
            sigma_ty: 0.05,
            sigma_tz: 0.3,
            sigma_alpha: 0.01,
            sigma_beta: 0.02,
            sigma_gamma: 0.03,
        };
        let q = covariance_q(&s, &HyperParams::default());
        let lin = Motion6DoF::new(0.5, 0.1, 1.0, 0.2, -0.3, 0.9);
        let info = information_from_q(&q, &lin, InverseMode::PseudoInverse).unwrap();
        for k in 0..3 {
            let expected = 1.0 / q[(k, k)];
            assert!((info[(k, k)] - expected).abs() < 1e-9 * expected);
        }
        assert!(info.fixed_view::<3, 4>(0, 3).amax() < 1e-9 * info.amax());
    }

    #[test]
    fn isotropic_identity_is_axis_symmetric() {
        let q = Matrix6::from_diagonal_element(0.04);
        let info = information_from_q(&q, &Motion6DoF::ZERO, InverseMode::PseudoInverse).unwrap();
        let rot = info.fixed_view::<4, 4>(3, 3);
        assert!(rot[(0, 0)].abs() < 1e-9);
        for a in 1..4 {
            assert!((rot[(a, a)] - rot[(1, 1)]).abs() < 1e-9 * rot[(1, 1)]);
            for b in 1..4 {
                if a != b {
                    assert!(rot[(a, b)].abs() < 1e-9);
                }
            }
        }
        // 4 / sigma^2 on the vector part: dq/dangle = 1/2.
        assert!((rot[(1, 1)] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn information_is_symmetric_psd_in_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for _ in 0..100 {
            let a = nalgebra::Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let q = a * a.transpose();
            let lin = Motion6DoF::new(0.0, 0.0, 0.0, rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0));
            for mode in [InverseMode::PseudoInverse, InverseMode::Ridge] {
                let info = information_from_q(&q, &lin, mode).unwrap();
                assert_eq!(info, info.transpose());
                let e = info.symmetric_eigenvalues();
                assert!(e.min() >= -1e-9 * e.amax().max(1.0), "{mode:?} {}", e.min());
            }
        }
    }

    #[test]
    fn non_psd_is_rejected() {
        let mut q = Matrix6::identity();
        q[(2, 2)] = -1.0;
        assert_eq!(
            information_from_q(&q, &Motion6DoF::ZERO, InverseMode::PseudoInverse),
            Err(PoseGraphError::NotPsd)
        );
    }

    #[test]
    fn minimal_form_round_trip() {
        let q = covariance_q(&SigmaParams::default(), &HyperParams::default());
        let lin = Motion6DoF::new(0.3, -0.1, 0.8, 0.1, 0.2, -0.4);
        let info = information_from_q(&q, &lin, InverseMode::PseudoInverse).unwrap();
        let quat = UnitQuat::from_euler(lin.alpha, lin.beta, lin.gamma);
        let back = information_from_minimal(&information_to_minimal(&info, &quat), &quat);
        assert!((back - info).amax() < 1e-9 * info.amax());
    }
}
