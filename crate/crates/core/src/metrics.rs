//! Trajectory evaluation: absolute trajectory error, relative pose error and
//! the KITTI odometry sub-sequence errors.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geom::SE3Pose;
use crate::math;

/// Sub-sequence lengths (meters) of the KITTI odometry protocol.
pub const KITTI_SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("trajectory lengths differ: {gt} ground-truth poses vs {est} estimated")]
    LengthMismatch { gt: usize, est: usize },
    #[error("frame id mismatch at index {index}: {gt} vs {est}")]
    IdMismatch { index: usize, gt: u64, est: u64 },
    #[error("frame ids must be strictly increasing (index {0})")]
    UnorderedIds(usize),
    #[error("timestamps must be strictly increasing (index {0})")]
    UnorderedTimestamps(usize),
    #[error("{count} timestamps for {poses} poses")]
    TimestampCount { count: usize, poses: usize },
    #[error("need more than {delta} poses, got {len}")]
    TooShort { len: usize, delta: usize },
    #[error("ground-truth path is {0} m long; at least 100 m is required")]
    PathTooShort(f64),
}

/// Time-ordered absolute poses (camera to world).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    ids: Vec<u64>,
    poses: Vec<SE3Pose>,
    timestamps: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(ids: Vec<u64>, poses: Vec<SE3Pose>) -> Result<Self, MetricsError> {
        if ids.len() != poses.len() {
            return Err(MetricsError::LengthMismatch {
                gt: ids.len(),
                est: poses.len(),
            });
        }
        if let Some(i) = (1..ids.len()).find(|&i| ids[i] <= ids[i - 1]) {
            return Err(MetricsError::UnorderedIds(i));
        }
        Ok(Trajectory {
            ids,
            poses,
            timestamps: None,
        })
    }

    /// Frame ids `0..n`.
    pub fn from_poses(poses: Vec<SE3Pose>) -> Self {
        Trajectory {
            ids: (0..poses.len() as u64).collect(),
            poses,
            timestamps: None,
        }
    }

    pub fn with_timestamps(mut self, stamps: Vec<f64>) -> Result<Self, MetricsError> {
        if stamps.len() != self.poses.len() {
            return Err(MetricsError::TimestampCount {
                count: stamps.len(),
                poses: self.poses.len(),
            });
        }
        if let Some(i) = (1..stamps.len()).find(|&i| !(stamps[i] > stamps[i - 1])) {
            return Err(MetricsError::UnorderedTimestamps(i));
        }
        self.timestamps = Some(stamps);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn poses(&self) -> &[SE3Pose] {
        &self.poses
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.translation).collect()
    }

    /// Left-multiplies every pose by `t` (a change of world frame).
    pub fn transformed(&self, t: &SE3Pose) -> Trajectory {
        Trajectory {
            ids: self.ids.clone(),
            poses: self.poses.iter().map(|p| t.compose(p)).collect(),
            timestamps: self.timestamps.clone(),
        }
    }

    /// Cumulative path length at every pose, starting at 0.
    pub fn path_distances(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for (k, p) in self.poses.iter().enumerate() {
            if k > 0 {
                acc += (p.translation - self.poses[k - 1].translation).norm();
            }
            out.push(acc);
        }
        out
    }
}

fn check_pair(gt: &Trajectory, est: &Trajectory) -> Result<(), MetricsError> {
    if gt.len() != est.len() {
        return Err(MetricsError::LengthMismatch {
            gt: gt.len(),
            est: est.len(),
        });
    }
    for (index, (a, b)) in gt.ids.iter().zip(&est.ids).enumerate() {
        if a != b {
            return Err(MetricsError::IdMismatch {
                index,
                gt: *a,
                est: *b,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    None,
    #[default]
    Rigid,
}

/// Closed-form least-squares rigid transform mapping `src` points onto `dst`.
pub fn align_rigid(dst: &[Vector3<f64>], src: &[Vector3<f64>]) -> SE3Pose {
    let n = dst.len().min(src.len());
    if n == 0 {
        return SE3Pose::identity();
    }
    let mu_d = dst[..n].iter().sum::<Vector3<f64>>() / n as f64;
    let mu_s = src[..n].iter().sum::<Vector3<f64>>() / n as f64;
    let mut cross = Matrix3::zeros();
    for (d, s) in dst[..n].iter().zip(&src[..n]) {
        cross += (s - mu_s) * (d - mu_d).transpose();
    }
    let svd = cross.svd(true, true);
    let (u, v) = (svd.u.unwrap(), svd.v_t.unwrap().transpose());
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    SE3Pose::new(r, mu_d - r * mu_s)
}

/// Root-mean-square position error, optionally after rigid alignment of `est` onto `gt`.
pub fn ate(gt: &Trajectory, est: &Trajectory, align: Alignment) -> Result<f64, MetricsError> {
    check_pair(gt, est)?;
    if gt.is_empty() {
        return Ok(0.0);
    }
    let g = gt.positions();
    let e = est.positions();
    let sse = |t: &SE3Pose| -> f64 {
        g.iter()
            .zip(&e)
            .map(|(g, e)| (g - t.transform_point(e)).norm_squared())
            .sum()
    };
    let mut sum = sse(&SE3Pose::identity());
    if align == Alignment::Rigid {
        // The identity stays a candidate so SVD round-off never makes the
        // aligned error exceed the unaligned one.
        sum = sum.min(sse(&align_rigid(&g, &e)));
    }
    Ok(math::sqrt(sum / g.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpeResult {
    /// Translational RMSE in meters.
    pub trans: f64,
    /// Rotational RMSE in degrees.
    pub rot_deg: f64,
    pub pairs: usize,
}

/// Relative pose error over all index pairs `(i, i + delta)`.
pub fn rpe(gt: &Trajectory, est: &Trajectory, delta: usize) -> Result<RpeResult, MetricsError> {
    check_pair(gt, est)?;
    let delta = delta.max(1);
    if gt.len() <= delta {
        return Err(MetricsError::TooShort { len: gt.len(), delta });
    }
    let (mut st, mut sr) = (0.0, 0.0);
    let pairs = gt.len() - delta;
    for i in 0..pairs {
        let g = gt.poses[i].between(&gt.poses[i + delta]);
        let e = est.poses[i].between(&est.poses[i + delta]);
        let err = g.between(&e);
        st += err.translation.norm_squared();
        let a = err.rotation_angle().to_degrees();
        sr += a * a;
    }
    Ok(RpeResult {
        trans: math::sqrt(st / pairs as f64),
        rot_deg: math::sqrt(sr / pairs as f64),
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KittiErrors {
    /// Mean translation error in percent.
    pub t_err: f64,
    /// Mean rotation error in degrees per 100 m.
    pub r_err: f64,
    pub segments: usize,
}

/// Averages relative errors over all sub-sequences of 100..800 m.
///
/// The end frame of a sub-sequence is the first frame whose ground-truth path
/// distance from the start reaches the segment length.
pub fn kitti_errors(gt: &Trajectory, est: &Trajectory) -> Result<KittiErrors, MetricsError> {
    check_pair(gt, est)?;
    let dist = gt.path_distances();
    let total = dist.last().copied().unwrap_or(0.0);
    if total < KITTI_SEGMENT_LENGTHS[0] {
        return Err(MetricsError::PathTooShort(total));
    }
    let (mut t_sum, mut r_sum, mut count) = (0.0, 0.0, 0usize);
    for first in 0..gt.len() {
        let mut last = first;
        for &len in KITTI_SEGMENT_LENGTHS.iter() {
            // Lengths increase, so the search resumes where the previous one stopped.
            while last < gt.len() && dist[last] - dist[first] < len {
                last += 1;
            }
            if last >= gt.len() {
                break;
            }
            let g = gt.poses[first].between(&gt.poses[last]);
            let e = est.poses[first].between(&est.poses[last]);
            let err = g.between(&e);
            t_sum += err.translation.norm() / len;
            r_sum += err.rotation_angle() / len;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(KittiErrors {
            t_err: 0.0,
            r_err: 0.0,
            segments: 0,
        });
    }
    Ok(KittiErrors {
        t_err: 100.0 * t_sum / count as f64,
        r_err: 100.0 * (r_sum / count as f64).to_degrees(),
        segments: count,
    })
}
