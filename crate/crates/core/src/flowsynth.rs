//! Synthetic optical flow from a single depth map and a 6DoF motion.
//!
//! Each valid pixel is lifted into the camera frustum, moved rigidly by the
//! motion, re-projected, and compared against its own grid position. There is
//! no z-buffering: every source pixel gets its own flow vector even if several
//! land on the same target pixel. Reprojections that leave the image or fall
//! behind the camera are masked out rather than clamped.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;
use rand::Rng;
use thiserror::Error;

use crate::camera::{self, Intrinsics, Projection};
use crate::geom::{Motion6DoF, SE3Pose};
use crate::motionmodel::MotionModel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowSynthError {
    #[error("dimension mismatch: expected {expected_width}x{expected_height}, got {width}x{height}")]
    DimensionMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },
    #[error("buffer holds {len} values for a {width}x{height} raster")]
    BadBuffer { width: usize, height: usize, len: usize },
}

fn check_dims(w: usize, h: usize, intr: &Intrinsics) -> Result<(), FlowSynthError> {
    if w != intr.width || h != intr.height {
        return Err(FlowSynthError::DimensionMismatch {
            expected_width: intr.width,
            expected_height: intr.height,
            width: w,
            height: h,
        });
    }
    Ok(())
}

/// Dense depth in meters, row-major. Invalid pixels hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    /// Wraps a row-major buffer. Non-finite or non-positive entries become NaN.
    pub fn new(width: usize, height: usize, mut values: Vec<f64>) -> Result<Self, FlowSynthError> {
        if values.len() != width * height {
            return Err(FlowSynthError::BadBuffer {
                width,
                height,
                len: values.len(),
            });
        }
        for v in values.iter_mut() {
            if !(*v > 0.0) || !v.is_finite() {
                *v = f64::NAN;
            }
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, z: f64) -> Self {
        DepthMap::new(width, height, vec![z; width * height]).expect("sized buffer")
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![f64::NAN; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Depth at `(u, v)`, or `None` when invalid.
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let z = self.values[v * self.width + u];
        if z.is_nan() {
            None
        } else {
            Some(z)
        }
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|z| !z.is_nan()).count()
    }
}

/// Dense 2D displacement field (pixels) with a validity mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn invalid(width: usize, height: usize) -> Self {
        let n = width * height;
        FlowField {
            width,
            height,
            u: vec![f64::NAN; n],
            v: vec![f64::NAN; n],
            valid: vec![false; n],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        FlowField {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
            valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        let i = y * self.width + x;
        if self.valid[i] {
            Some((self.u[i], self.v[i]))
        } else {
            None
        }
    }

    pub fn set(&mut self, x: usize, y: usize, flow: Option<(f64, f64)>) {
        let i = y * self.width + x;
        match flow {
            Some((u, v)) => {
                self.u[i] = u;
                self.v[i] = v;
                self.valid[i] = true;
            }
            None => {
                self.u[i] = f64::NAN;
                self.v[i] = f64::NAN;
                self.valid[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }
}

/// Per-pixel 3D points in pixel-grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl PointCloud {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }
}

pub fn depth_to_pointcloud(depth: &DepthMap, intr: &Intrinsics) -> Result<PointCloud, FlowSynthError> {
    check_dims(depth.width, depth.height, intr)?;
    let n = depth.width * depth.height;
    let mut points = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for v in 0..depth.height {
        for u in 0..depth.width {
            match depth
                .get(u, v)
                .and_then(|z| camera::backproject(u as f64, v as f64, z, intr).ok())
            {
                Some(p) => {
                    points.push(p);
                    valid.push(true);
                }
                None => {
                    points.push(Vector3::new(f64::NAN, f64::NAN, f64::NAN));
                    valid.push(false);
                }
            }
        }
    }
    Ok(PointCloud {
        width: depth.width,
        height: depth.height,
        points,
        valid,
    })
}

/// Applies `motion` to every valid point: `P' = R P + t`.
pub fn transform_pointcloud(cloud: &PointCloud, motion: &Motion6DoF) -> PointCloud {
    let pose = motion.to_se3();
    transform_pointcloud_se3(cloud, &pose)
}

pub fn transform_pointcloud_se3(cloud: &PointCloud, pose: &SE3Pose) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .zip(&cloud.valid)
        .map(|(p, &ok)| if ok { pose.transform_point(p) } else { *p })
        .collect();
    PointCloud {
        width: cloud.width,
        height: cloud.height,
        points,
        valid: cloud.valid.clone(),
    }
}

/// Flow that a camera moved by `motion` observes, on the grid of `depth`.
pub fn synthesize_flow(
    depth: &DepthMap,
    motion: &Motion6DoF,
    intr: &Intrinsics,
) -> Result<FlowField, FlowSynthError> {
    synthesize_flow_se3(depth, &motion.to_se3(), intr)
}

/// [`synthesize_flow`] for a motion already in matrix form.
pub fn synthesize_flow_se3(
    depth: &DepthMap,
    pose: &SE3Pose,
    intr: &Intrinsics,
) -> Result<FlowField, FlowSynthError> {
    check_dims(depth.width, depth.height, intr)?;
    let mut flow = FlowField::invalid(depth.width, depth.height);
    for v in 0..depth.height {
        for u in 0..depth.width {
            let Some(z) = depth.get(u, v) else { continue };
            let Ok(p) = camera::backproject(u as f64, v as f64, z, intr) else {
                continue;
            };
            if let Projection::InImage { u: pu, v: pv } = camera::project(&pose.transform_point(&p), intr) {
                flow.set(u, v, Some((pu - u as f64, pv - v as f64)));
            }
        }
    }
    Ok(flow)
}

/// Samples a motion from `model` and synthesizes its flow on `depth`.
pub fn generate_training_pair<R: Rng + ?Sized>(
    depth: &DepthMap,
    model: &MotionModel,
    rng: &mut R,
    intr: &Intrinsics,
) -> Result<(FlowField, Motion6DoF), FlowSynthError> {
    let motion = model.sample(rng);
    let flow = synthesize_flow(depth, &motion, intr)?;
    Ok((flow, motion))
}
