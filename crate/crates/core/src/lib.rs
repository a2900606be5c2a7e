//! Core algorithms for training-data synthesis and SLAM from dense optical flow.
//!
//! The crate is `no_std` (with `alloc`) and carries no I/O. It covers
//!
//! * [`geom`]: rigid-motion algebra and the 6-parameter motion encoding,
//! * [`camera`]: the pinhole model and stereo disparity to depth,
//! * [`flowsynth`]: dense flow synthesis from a depth map and a 6DoF motion,
//! * [`motionmodel`]: per-DoF Student-t motion model (EM fit and sampling),
//! * [`vo`]: a geometric flow-to-motion estimator and the two-estimator policy,
//! * [`reloc`]: binary features, a visual vocabulary and loop detection,
//! * [`posegraph`]: pose-graph construction and Levenberg-Marquardt optimization,
//! * [`metrics`]: ATE, RPE and KITTI sub-sequence errors,
//! * [`sim`]: an analytic ray-cast world used as ground truth.
//!
//! # Conventions
//!
//! Camera frames are x right, y down, z forward. Euler angles compose as
//! `R = Rz(gamma) * Ry(beta) * Rx(alpha)`. A [`geom::Motion6DoF`] handed to
//! [`flowsynth::synthesize_flow`] transforms points of the frame whose depth
//! is given into the other frame: `P' = R * P + t`. For a frame pair `(i, j)`
//! the flow lives on frame `j`'s pixel grid and the motion is the pose of
//! camera `j` expressed in camera `i`, which is exactly the pose-graph edge
//! measurement between nodes `i` and `j`.

#![no_std]
// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod camera;
pub mod flowsynth;
pub mod geom;
pub mod metrics;
pub mod motionmodel;
pub mod posegraph;
pub mod reloc;
pub mod rng;
pub mod sim;
pub mod vo;

mod math;

pub use camera::Intrinsics;
pub use flowsynth::{DepthMap, FlowField, PointCloud};
pub use geom::{Motion6DoF, SE3Pose, UnitQuat};
pub use metrics::Trajectory;
pub use motionmodel::MotionModel;
pub use posegraph::PoseGraph;
