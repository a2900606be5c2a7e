//! Motion estimation from dense flow and depth.
//!
//! [`estimate_motion`] inverts flow synthesis: it searches for the motion whose
//! synthesized flow best explains the observed one, minimizing a Huber-robust
//! reprojection objective by damped Gauss-Newton (Levenberg-Marquardt with
//! iteratively reweighted normal equations). It starts at zero motion.
//!
//! [`EstimatorPolicy`] routes a frame pair to the consecutive-frame or the
//! loop estimator depending on the frame-index gap.

use alloc::vec::Vec;

use nalgebra::{Matrix2x3, Matrix3, Matrix6, SMatrix, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::camera::{self, Intrinsics, BEHIND_CAMERA_EPS};
use crate::flowsynth::{DepthMap, FlowField};
use crate::geom::{rotation_euler_derivatives, rotation_from_euler, Motion6DoF};
use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VoError {
    #[error("flow is {flow_width}x{flow_height} but depth is {depth_width}x{depth_height}")]
    DimensionMismatch {
        flow_width: usize,
        flow_height: usize,
        depth_width: usize,
        depth_height: usize,
    },
    #[error("only {found} usable pixels, need at least {required}")]
    TooFewPixels { found: usize, required: usize },
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Settings of the geometric estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the norm of the parameter update.
    pub tolerance: f64,
    /// Huber threshold in pixels.
    pub huber_scale: f64,
    /// Only every `stride`-th row and column is used. 2 quarters the cost
    /// with no measurable accuracy loss on dense flow.
    pub stride: usize,
    pub min_pixels: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            max_iterations: 100,
            tolerance: 1e-12,
            huber_scale: 1.0,
            stride: 2,
            min_pixels: 100,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), VoError> {
        if self.max_iterations < 1 {
            return Err(VoError::InvalidConfig("max_iterations must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(VoError::InvalidConfig("tolerance must be positive"));
        }
        if !(self.huber_scale > 0.0) {
            return Err(VoError::InvalidConfig("huber_scale must be positive"));
        }
        if self.stride < 1 {
            return Err(VoError::InvalidConfig("stride must be at least 1"));
        }
        Ok(())
    }
}

/// A relative motion with its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionEstimate {
    pub motion: Motion6DoF,
    /// Covariance over `(tx, ty, tz, alpha, beta, gamma)`.
    pub covariance: Matrix6<f64>,
    pub inlier_fraction: f64,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MotionEstimate {
    /// An estimate that carries only a motion and a prescribed covariance.
    pub fn from_motion(motion: Motion6DoF, covariance: Matrix6<f64>) -> Self {
        MotionEstimate {
            motion,
            covariance,
            inlier_fraction: 1.0,
            residual_rms: 0.0,
            iterations: 0,
            converged: true,
        }
    }
}

struct Sample {
    point: Vector3<f64>,
    target: Vector2<f64>,
}

fn huber(s: f64, k: f64) -> f64 {
    if s <= k {
        0.5 * s * s
    } else {
        k * (s - 0.5 * k)
    }
}

/// Contribution of a pixel whose prediction falls behind the camera.
fn behind_penalty(k: f64) -> f64 {
    huber(1e4 * k, k)
}

fn predict(r: &Matrix3<f64>, t: &Vector3<f64>, p: &Vector3<f64>, intr: &Intrinsics) -> Option<(Vector3<f64>, Vector2<f64>)> {
    let q = r * p + t;
    if !(q.z > BEHIND_CAMERA_EPS) {
        return None;
    }
    Some((q, Vector2::new(intr.fx * q.x / q.z + intr.cx, intr.fy * q.y / q.z + intr.cy)))
}

fn objective(samples: &[Sample], m: &[f64; 6], intr: &Intrinsics, k: f64) -> f64 {
    let r = rotation_from_euler(m[3], m[4], m[5]);
    let t = Vector3::new(m[0], m[1], m[2]);
    samples
        .iter()
        .map(|s| match predict(&r, &t, &s.point, intr) {
            Some((_, uv)) => huber((s.target - uv).norm(), k),
            None => behind_penalty(k),
        })
        .sum()
}

struct Normal {
    h: Matrix6<f64>,
    g: Vector6<f64>,
    weighted_sq: f64,
    used: usize,
    inliers: usize,
}

fn normal_equations(samples: &[Sample], m: &[f64; 6], intr: &Intrinsics, k: f64) -> Normal {
    let r = rotation_from_euler(m[3], m[4], m[5]);
    let dr = rotation_euler_derivatives(m[3], m[4], m[5]);
    let t = Vector3::new(m[0], m[1], m[2]);
    let mut out = Normal {
        h: Matrix6::zeros(),
        g: Vector6::zeros(),
        weighted_sq: 0.0,
        used: 0,
        inliers: 0,
    };
    for s in samples {
        let Some((q, uv)) = predict(&r, &t, &s.point, intr) else {
            continue;
        };
        let res = s.target - uv;
        let norm = res.norm();
        let w = if norm <= k { 1.0 } else { k / norm };
        let iz = 1.0 / q.z;
        let dproj = Matrix2x3::new(
            intr.fx * iz,
            0.0,
            -intr.fx * q.x * iz * iz,
            0.0,
            intr.fy * iz,
            -intr.fy * q.y * iz * iz,
        );
        let mut dq = SMatrix::<f64, 3, 6>::zeros();
        dq.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        for (c, d) in dr.iter().enumerate() {
            dq.set_column(3 + c, &(d * s.point));
        }
        let j = dproj * dq;
        out.h += w * j.transpose() * j;
        out.g += w * j.transpose() * res;
        out.weighted_sq += w * res.norm_squared();
        out.used += 1;
        if norm <= k {
            out.inliers += 1;
        }
    }
    out
}

/// Finds the motion that maps `depth`'s points so that their reprojection matches `flow`.
///
/// `flow` and `depth` live on the same pixel grid; the returned motion follows
/// the convention of [`crate::flowsynth::synthesize_flow`].
pub fn estimate_motion(
    flow: &FlowField,
    depth: &DepthMap,
    intr: &Intrinsics,
    cfg: &EstimatorConfig,
) -> Result<MotionEstimate, VoError> {
    cfg.validate()?;
    if flow.width != depth.width() || flow.height != depth.height() || depth.width() != intr.width || depth.height() != intr.height {
        return Err(VoError::DimensionMismatch {
            flow_width: flow.width,
            flow_height: flow.height,
            depth_width: depth.width(),
            depth_height: depth.height(),
        });
    }
    let mut samples = Vec::new();
    for y in (0..flow.height).step_by(cfg.stride) {
        for x in (0..flow.width).step_by(cfg.stride) {
            let (Some((fu, fv)), Some(z)) = (flow.get(x, y), depth.get(x, y)) else {
                continue;
            };
            if !(fu.is_finite() && fv.is_finite()) {
                continue;
            }
            let Ok(point) = camera::backproject(x as f64, y as f64, z, intr) else {
                continue;
            };
            samples.push(Sample {
                point,
                target: Vector2::new(x as f64 + fu, y as f64 + fv),
            });
        }
    }
    if samples.len() < cfg.min_pixels {
        return Err(VoError::TooFewPixels {
            found: samples.len(),
            required: cfg.min_pixels,
        });
    }

    let k = cfg.huber_scale;
    let mut params = [0.0f64; 6];
    let mut cost = objective(&samples, &params, intr, k);
    let mut lambda = 1e-4;
    let mut iterations = 0;
    let mut converged = false;
    let mut normal = normal_equations(&samples, &params, intr, k);
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut damped = normal.h;
        for d in 0..6 {
            damped[(d, d)] += lambda * normal.h[(d, d)].max(1e-12);
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&normal.g)) else {
            lambda *= 10.0;
            continue;
        };
        let mut candidate = params;
        for (c, s) in candidate.iter_mut().zip(step.iter()) {
            *c += s;
        }
        let new_cost = objective(&samples, &candidate, intr, k);
        if new_cost <= cost {
            params = candidate;
            cost = new_cost;
            lambda = (lambda / 10.0).max(1e-12);
            normal = normal_equations(&samples, &params, intr, k);
            if step.norm() < cfg.tolerance {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // No descent direction left at machine precision.
                converged = step.norm() < cfg.tolerance.max(1e-9) || cost == 0.0;
                break;
            }
        }
    }

    let dof = (2 * normal.used).saturating_sub(6).max(1) as f64;
    let variance = normal.weighted_sq / dof;
    let mut covariance = match normal.h.try_inverse() {
        Some(inv) => inv * variance,
        None => Matrix6::from_diagonal_element(f64::INFINITY),
    };
    covariance = 0.5 * (covariance + covariance.transpose());
    Ok(MotionEstimate {
        motion: Motion6DoF::from_array(params),
        covariance,
        inlier_fraction: normal.inliers as f64 / samples.len() as f64,
        residual_rms: math::sqrt(normal.weighted_sq / normal.used.max(1) as f64),
        iterations,
        converged,
    })
}

/// Which estimator handles a frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorChoice {
    Consecutive,
    Loop,
}

/// Two motion sources and the loop threshold that picks between them.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorPolicy<S> {
    pub consecutive: S,
    pub loop_closure: S,
    pub t_loop: usize,
}

impl<S> EstimatorPolicy<S> {
    pub fn new(consecutive: S, loop_closure: S, t_loop: usize) -> Result<Self, VoError> {
        if t_loop < 1 {
            return Err(VoError::InvalidConfig("T_loop must be at least 1"));
        }
        Ok(EstimatorPolicy {
            consecutive,
            loop_closure,
            t_loop,
        })
    }

    /// The loop estimator runs only when the gap strictly exceeds `t_loop`.
    pub fn select(&self, frame_gap: usize) -> EstimatorChoice {
        select_estimator(self.t_loop, frame_gap)
    }

    pub fn source(&self, frame_gap: usize) -> &S {
        match self.select(frame_gap) {
            EstimatorChoice::Consecutive => &self.consecutive,
            EstimatorChoice::Loop => &self.loop_closure,
        }
    }
}

pub fn select_estimator(t_loop: usize, frame_gap: usize) -> EstimatorChoice {
    if frame_gap > t_loop {
        EstimatorChoice::Loop
    } else {
        EstimatorChoice::Consecutive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowsynth::synthesize_flow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 48.0, 36.0, 96, 72).unwrap()
    }

    fn bumpy_depth(intr: &Intrinsics) -> DepthMap {
        let v = (0..intr.pixel_count())
            .map(|i| {
                let (x, y) = ((i % intr.width) as f64, (i / intr.width) as f64);
                6.0 + 2.0 * libm::sin(x * 0.15) + 1.5 * libm::cos(y * 0.2) + 0.01 * x
            })
            .collect();
        DepthMap::new(intr.width, intr.height, v).unwrap()
    }

    fn small_motion(rng: &mut ChaCha8Rng) -> Motion6DoF {
        Motion6DoF::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.03..0.03),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.03..0.03),
        )
    }

    #[test]
    fn zero_flow_gives_identity() {
        let intr = intr();
        let depth = bumpy_depth(&intr);
        let flow = FlowField::zeros(96, 72);
        let est = estimate_motion(&flow, &depth, &intr, &EstimatorConfig::default()).unwrap();
        assert!(est.motion.to_array().iter().all(|v| v.abs() < 1e-15));
        assert!(est.residual_rms < 1e-10);
        assert!(est.converged);
    }

    #[test]
    fn inverts_noiseless_synthesized_flow() {
        let intr = intr();
        let depth = bumpy_depth(&intr);
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..20 {
            let m = small_motion(&mut rng);
            let flow = synthesize_flow(&depth, &m, &intr).unwrap();
            let est = estimate_motion(&flow, &depth, &intr, &EstimatorConfig::default()).unwrap();
            let d = est.motion.to_se3().between(&m.to_se3());
            assert!(d.translation.norm() < 1e-6, "{m:?} -> {:?}", est.motion);
            assert!(d.rotation_angle() < 1e-8);
            assert!(est.covariance.amax() < 1e-12);
            assert!(est.inlier_fraction > 0.99);
        }
    }

    #[test]
    fn covariance_scales_with_pixel_noise() {
        let intr = intr();
        let depth = bumpy_depth(&intr);
        let m = Motion6DoF::new(0.1, 0.02, 0.2, 0.01, -0.02, 0.005);
        let clean = synthesize_flow(&depth, &m, &intr).unwrap();
        let cfg = EstimatorConfig {
            huber_scale: 100.0,
            ..EstimatorConfig::default()
        };
        let mut trace = [0.0; 2];
        for (slot, sigma) in [0.1, 0.3].iter().enumerate() {
            let noise = Normal::new(0.0, *sigma).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(51);
            let mut acc = 0.0;
            for _ in 0..10 {
                let mut f = clean.clone();
                for i in 0..f.len() {
                    if f.valid[i] {
                        f.u[i] += noise.sample(&mut rng);
                        f.v[i] += noise.sample(&mut rng);
                    }
                }
                let est = estimate_motion(&f, &depth, &intr, &cfg).unwrap();
                let cov = est.covariance;
                assert!((cov - cov.transpose()).amax() < 1e-9 * cov.amax());
                assert!(cov.symmetric_eigenvalues().min() > -1e-9 * cov.amax());
                acc += cov.trace();
            }
            trace[slot] = acc;
        }
        let ratio = trace[1] / trace[0];
        assert!((ratio - 9.0).abs() < 0.3 * 9.0, "ratio {ratio}");
    }

    #[test]
    fn too_few_pixels_and_mismatch() {
        let intr = intr();
        let depth = DepthMap::invalid(96, 72);
        let flow = FlowField::zeros(96, 72);
        assert!(matches!(
            estimate_motion(&flow, &depth, &intr, &EstimatorConfig::default()),
            Err(VoError::TooFewPixels { .. })
        ));
        let flow = FlowField::zeros(10, 10);
        assert!(matches!(
            estimate_motion(&flow, &bumpy_depth(&intr), &intr, &EstimatorConfig::default()),
            Err(VoError::DimensionMismatch { .. })
        ));
        let bad = EstimatorConfig {
            stride: 0,
            ..EstimatorConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn huber_weighting_resists_outliers() {
        let intr = intr();
        let depth = bumpy_depth(&intr);
        let m = Motion6DoF::new(0.2, 0.0, 0.1, 0.0, 0.02, 0.0);
        let mut flow = synthesize_flow(&depth, &m, &intr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for i in 0..flow.len() {
            if flow.valid[i] && rng.random_bool(0.05) {
                flow.u[i] += 25.0;
            }
        }
        let est = estimate_motion(&flow, &depth, &intr, &EstimatorConfig::default()).unwrap();
        let d = est.motion.to_se3().between(&m.to_se3());
        assert!(d.translation.norm() < 0.02);
        assert!(est.inlier_fraction < 0.99);
    }

    #[test]
    fn loop_threshold_is_strict() {
        let p = EstimatorPolicy::new("cons", "loop", 50).unwrap();
        assert_eq!(p.select(1), EstimatorChoice::Consecutive);
        assert_eq!(p.select(50), EstimatorChoice::Consecutive);
        assert_eq!(p.select(60), EstimatorChoice::Loop);
        assert_eq!(*p.source(51), "loop");
        assert!(EstimatorPolicy::new(1, 2, 0).is_err());
    }
}
