//! Pinhole camera model and stereo disparity to depth.
//!
//! Pixel coordinates are continuous and `(0, 0)` is the center of the top-left
//! pixel, so pixel `(u, v)` of a raster sits at integer coordinates.

use nalgebra::Vector3;
use thiserror::Error;

/// Points with `z` at or below this distance (meters) count as behind the camera.
pub const BEHIND_CAMERA_EPS: f64 = 1e-6;

/// Depth value used for pixels without a valid measurement.
pub const INVALID_DEPTH: f64 = f64::NAN;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("stereo baseline is not configured")]
    MissingBaseline,
    #[error("depth must be positive and finite, got {0}")]
    NonPositiveDepth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Stereo baseline in meters, when known.
    pub baseline: Option<f64>,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        let intr = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            baseline: None,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn with_baseline(mut self, baseline: f64) -> Result<Self, CameraError> {
        self.baseline = Some(baseline);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return Err(CameraError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidIntrinsics("image must be non-empty"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(CameraError::InvalidIntrinsics("c_x outside the image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(CameraError::InvalidIntrinsics("c_y outside the image"));
        }
        if let Some(b) = self.baseline {
            if !(b > 0.0 && b.is_finite()) {
                return Err(CameraError::InvalidIntrinsics("baseline must be positive"));
            }
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Ray through pixel `(u, v)` scaled so that its z component is 1.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// `z = f_x * B / d`. Non-positive or non-finite disparities map to [`INVALID_DEPTH`].
pub fn depth_from_disparity(d: f64, intr: &Intrinsics) -> Result<f64, CameraError> {
    let baseline = intr.baseline.ok_or(CameraError::MissingBaseline)?;
    if !(d > 0.0) || !d.is_finite() {
        return Ok(INVALID_DEPTH);
    }
    Ok(intr.fx * baseline / d)
}

pub fn backproject(u: f64, v: f64, z: f64, intr: &Intrinsics) -> Result<Vector3<f64>, CameraError> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(CameraError::NonPositiveDepth(z));
    }
    Ok(Vector3::new(
        (u - intr.cx) * z / intr.fx,
        (v - intr.cy) * z / intr.fy,
        z,
    ))
}

/// Outcome of projecting a 3D point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    InImage { u: f64, v: f64 },
    OutOfBounds { u: f64, v: f64 },
    BehindCamera,
}

impl Projection {
    pub fn in_bounds(&self) -> bool {
        matches!(self, Projection::InImage { .. })
    }

    /// Pixel coordinates, unless the point is behind the camera.
    pub fn pixel(&self) -> Option<(f64, f64)> {
        match *self {
            Projection::InImage { u, v } | Projection::OutOfBounds { u, v } => Some((u, v)),
            Projection::BehindCamera => None,
        }
    }
}

pub fn project(p: &Vector3<f64>, intr: &Intrinsics) -> Projection {
    if !(p.z > BEHIND_CAMERA_EPS) {
        return Projection::BehindCamera;
    }
    let u = intr.fx * p.x / p.z + intr.cx;
    let v = intr.fy * p.y / p.z + intr.cy;
    if intr.in_bounds(u, v) {
        Projection::InImage { u, v }
    } else {
        Projection::OutOfBounds { u, v }
    }
}
