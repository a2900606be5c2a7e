//! Analytic ray-cast world for end-to-end checks.
//!
//! World axes follow the camera: x right, y down, z forward. The ground is
//! the plane `y = ground_y` below a camera travelling at `y = 0`. Depths are
//! closed-form ray intersections, so flow built from them is exact.

use alloc::vec::Vec;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::camera::Intrinsics;
use crate::flowsynth::{synthesize_flow_se3, DepthMap, FlowField, FlowSynthError};
use crate::geom::{rot_y, Motion6DoF, SE3Pose};
use crate::math;
use crate::reloc::GrayImage;
use crate::rng::{self, splitmix64};

/// Hits farther than this along the optical axis count as background.
pub const MAX_RANGE: f64 = 30.0;
/// Camera height above the ground plane.
pub const CAMERA_HEIGHT: f64 = 1.5;
/// Minimum distance between any generated object and the path.
pub const PATH_CLEARANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid trajectory spec: {0}")]
    InvalidSpec(&'static str),
    #[error(transparent)]
    Flow(#[from] FlowSynthError),
}

/// Points `p` with `normal . p = offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Multi-octave value noise on the integer lattice, values in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueNoise {
    pub seed: u64,
    /// Lattice cells per meter of the first octave.
    pub frequency: f64,
    pub octaves: u32,
    pub persistence: f64,
}

impl ValueNoise {
    pub fn new(seed: u64) -> Self {
        ValueNoise {
            seed,
            frequency: 4.0,
            octaves: 6,
            persistence: 0.8,
        }
    }

    fn lattice(&self, octave: u32, x: i64, y: i64, z: i64) -> f64 {
        let key = self.seed
            ^ (octave as u64).wrapping_mul(0x632b_e59b_d9b4_e019)
            ^ (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
            ^ (z as u64).wrapping_mul(0x1656_67b1_9e37_79f9);
        (splitmix64(key) >> 11) as f64 / (1u64 << 53) as f64
    }

    fn octave(&self, o: u32, p: Vector3<f64>) -> f64 {
        let fl = [math::floor(p.x), math::floor(p.y), math::floor(p.z)];
        let fr = [p.x - fl[0], p.y - fl[1], p.z - fl[2]];
        let s = fr.map(|t| t * t * (3.0 - 2.0 * t));
        let (x0, y0, z0) = (fl[0] as i64, fl[1] as i64, fl[2] as i64);
        let mut acc = 0.0;
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if dx == 1 { s[0] } else { 1.0 - s[0] })
                * (if dy == 1 { s[1] } else { 1.0 - s[1] })
                * (if dz == 1 { s[2] } else { 1.0 - s[2] });
            acc += w * self.lattice(o, x0 + dx, y0 + dy, z0 + dz);
        }
        acc
    }

    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        self.sample_filtered(p, 0.0)
    }

    /// Texture seen through a pixel covering `footprint` meters of surface.
    /// Octaves finer than about two pixels fade to their mean, which keeps
    /// distant and grazing surfaces free of aliasing noise.
    pub fn sample_filtered(&self, p: &Vector3<f64>, footprint: f64) -> f64 {
        let (mut amp, mut freq, mut sum, mut norm) = (1.0, self.frequency, 0.0, 0.0);
        for o in 0..self.octaves {
            let keep = ((0.5 - freq * footprint) / 0.25).clamp(0.0, 1.0);
            let value = if keep > 0.0 { self.octave(o, p * freq) } else { 0.5 };
            sum += amp * (keep * value + (1.0 - keep) * 0.5);
            norm += amp;
            amp *= self.persistence;
            freq *= 2.0;
        }
        // Stretch contrast around the mean; octave sums cluster near 0.5.
        (0.5 + 2.0 * (sum / norm - 0.5)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub planes: Vec<Plane>,
    pub boxes: Vec<Aabb>,
    pub spheres: Vec<Sphere>,
    pub texture: ValueNoise,
}

/// A ray hit: parameter `s` along `origin + s * dir` and the surface normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub s: f64,
    pub normal: Vector3<f64>,
}

fn hit_plane(p: &Plane, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let den = p.normal.dot(d);
    if den == 0.0 {
        return None;
    }
    let s = (p.offset - p.normal.dot(o)) / den;
    (s > 0.0).then_some(Hit { s, normal: p.normal })
}

fn hit_box(b: &Aabb, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut axis = 0;
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k] < b.min[k] || o[k] > b.max[k] {
                return None;
            }
            continue;
        }
        let (a, c) = ((b.min[k] - o[k]) / d[k], (b.max[k] - o[k]) / d[k]);
        let (a, c) = if a < c { (a, c) } else { (c, a) };
        if a > lo {
            lo = a;
            axis = k;
        }
        hi = hi.min(c);
        if lo > hi {
            return None;
        }
    }
    let mut normal = Vector3::zeros();
    normal[axis] = 1.0;
    (lo > 0.0).then_some(Hit { s: lo, normal })
}

fn hit_sphere(sp: &Sphere, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let oc = o - sp.center;
    let a = d.norm_squared();
    let b = oc.dot(d);
    let c = oc.norm_squared() - sp.radius * sp.radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let r = math::sqrt(disc);
    let s0 = (-b - r) / a;
    let s = if s0 > 0.0 { s0 } else { (-b + r) / a };
    (s > 0.0).then(|| Hit {
        s,
        normal: (o + d * s - sp.center) / sp.radius,
    })
}

/// Camera-frame side planes of the view frustum as unit normals pointing outwards.
fn frustum_normals(intr: &Intrinsics) -> [Vector3<f64>; 4] {
    let x0 = (-0.5 - intr.cx) / intr.fx;
    let x1 = (intr.width as f64 - 0.5 - intr.cx) / intr.fx;
    let y0 = (-0.5 - intr.cy) / intr.fy;
    let y1 = (intr.height as f64 - 0.5 - intr.cy) / intr.fy;
    [
        Vector3::new(1.0, 0.0, -x1).normalize(),
        Vector3::new(-1.0, 0.0, x0).normalize(),
        Vector3::new(0.0, 1.0, -y1).normalize(),
        Vector3::new(0.0, -1.0, y0).normalize(),
    ]
}

impl Scene {
    pub fn new(texture: ValueNoise) -> Self {
        Scene {
            planes: Vec::new(),
            boxes: Vec::new(),
            spheres: Vec::new(),
            texture,
        }
    }

    pub fn ground() -> Plane {
        Plane {
            normal: Vector3::new(0.0, 1.0, 0.0),
            offset: CAMERA_HEIGHT,
        }
    }

    /// Ground plane plus boxes and sprites scattered beside the path of `spec`.
    pub fn generate(spec: &TrajectorySpec, seed: u64) -> Self {
        let mut scene = Scene::new(ValueNoise::new(rng::derive_seed(seed, rng::stage::SIM_TEXTURE, 0)));
        scene.planes.push(Scene::ground());
        let mut rng = rng::stream(seed, rng::stage::SIM_SCENE, 0);
        let wps = &spec.waypoints;
        for seg in wps.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let len = seg_len(a, b);
            if len == 0.0 {
                continue;
            }
            let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
            let side = [-dir[1], dir[0]];
            // Buildings line both sides like a street; small props sit in
            // front of them.
            let stations = (len / 3.0) as usize;
            for k in 0..stations {
                let along = (k as f64 + 0.5) * len / stations as f64;
                for sign in [-1.0, 1.0] {
                    if rng.random::<f64>() < 0.85 {
                        let half_depth = rng.random_range(0.8..2.0);
                        let off = sign * (3.0 + half_depth + rng.random_range(0.0..1.5));
                        let c = [a[0] + dir[0] * along + side[0] * off, a[1] + dir[1] * along + side[1] * off];
                        let half_along = rng.random_range(0.8..1.6);
                        let (hx, hz) = (
                            (dir[0] * half_along).abs() + (side[0] * half_depth).abs(),
                            (dir[1] * half_along).abs() + (side[1] * half_depth).abs(),
                        );
                        let height = rng.random_range(3.0..8.0);
                        let bx = Aabb {
                            min: Vector3::new(c[0] - hx, CAMERA_HEIGHT - height, c[1] - hz),
                            max: Vector3::new(c[0] + hx, CAMERA_HEIGHT, c[1] + hz),
                        };
                        if path_distance_to_rect(wps, &bx) >= PATH_CLEARANCE {
                            scene.boxes.push(bx);
                        }
                    }
                    if rng.random::<f64>() < 0.4 {
                        let off = sign * rng.random_range(1.5..3.0);
                        let along = along + rng.random_range(-1.5..1.5);
                        let r = rng.random_range(0.15..0.4);
                        let sp = Sphere {
                            center: Vector3::new(
                                a[0] + dir[0] * along + side[0] * off,
                                rng.random_range(0.0..CAMERA_HEIGHT - r),
                                a[1] + dir[1] * along + side[1] * off,
                            ),
                            radius: r,
                        };
                        if path_distance(wps, sp.center.x, sp.center.z) - r >= PATH_CLEARANCE {
                            scene.spheres.push(sp);
                        }
                    }
                }
            }
        }
        scene
    }

    /// Nearest hit of the world-space ray.
    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut take = |h: Option<Hit>| {
            if let Some(h) = h {
                if best.is_none_or(|b| h.s < b.s) {
                    best = Some(h);
                }
            }
        };
        for p in &self.planes {
            take(hit_plane(p, o, d));
        }
        for b in &self.boxes {
            take(hit_box(b, o, d));
        }
        for s in &self.spheres {
            take(hit_sphere(s, o, d));
        }
        best
    }

}

fn seg_len(a: [f64; 2], b: [f64; 2]) -> f64 {
    math::hypot(b[0] - a[0], b[1] - a[1])
}

fn segment_point_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let l2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if l2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / l2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * ab[0] - p[0], a[1] + t * ab[1] - p[1]];
    math::sqrt(q[0] * q[0] + q[1] * q[1])
}

/// Ground-plane distance from `(x, z)` to the waypoint polyline.
pub fn path_distance(wps: &[[f64; 2]], x: f64, z: f64) -> f64 {
    wps.windows(2)
        .map(|s| segment_point_distance(s[0], s[1], [x, z]))
        .fold(f64::INFINITY, f64::min)
}

/// Ground-plane distance between the polyline and the footprint of `b`.
fn path_distance_to_rect(wps: &[[f64; 2]], b: &Aabb) -> f64 {
    let mut best = f64::INFINITY;
    for s in wps.windows(2) {
        let len = seg_len(s[0], s[1]);
        let n = (len / 0.05) as usize + 1;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let p = [s[0][0] + t * (s[1][0] - s[0][0]), s[0][1] + t * (s[1][1] - s[0][1])];
            let dx = (b.min.x - p[0]).max(0.0).max(p[0] - b.max.x);
            let dz = (b.min.z - p[1]).max(0.0).max(p[1] - b.max.z);
            best = best.min(math::sqrt(dx * dx + dz * dz));
        }
    }
    best
}

#[derive(Clone, Copy)]
enum Shape {
    Box(Aabb),
    Ball(Sphere),
}

impl Shape {
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        match self {
            Shape::Box(b) => hit_box(b, o, d),
            Shape::Ball(s) => hit_sphere(s, o, d),
        }
    }
}

/// An object with the pixel rectangle that conservatively bounds its image.
struct Footprint {
    shape: Shape,
    u: (usize, usize),
    v: (usize, usize),
}

/// Pixel bounds of a world-space bounding sphere, or `None` when it cannot be seen.
fn footprint(center: Vector3<f64>, radius: f64, inv: &SE3Pose, intr: &Intrinsics, normals: &[Vector3<f64>; 4]) -> Option<((usize, usize), (usize, usize))> {
    let c = inv.transform_point(&center);
    if c.z + radius <= 0.0 || c.z - radius > MAX_RANGE || normals.iter().any(|n| n.dot(&c) > radius) {
        return None;
    }
    let full = ((0, intr.width - 1), (0, intr.height - 1));
    if c.z - radius <= 1e-3 {
        return Some(full);
    }
    // Tangent-cone bounds of the sphere along each image axis.
    let axis = |lateral: f64, f: f64, center_px: f64, size: usize| {
        let l2 = lateral * lateral + c.z * c.z;
        let r2 = radius * radius;
        let h = math::sqrt((l2 - r2).max(0.0));
        let den = c.z * h - lateral * radius;
        let lo = (lateral * h - c.z * radius) / (c.z * h + lateral * radius);
        let hi = (lateral * h + c.z * radius) / den.max(1e-12);
        let lo_px = math::floor(f * lo + center_px) - 1.0;
        let hi_px = math::floor(f * hi + center_px) + 2.0;
        if den <= 0.0 {
            return Some((lo_px.max(0.0) as usize, size - 1));
        }
        if hi_px < 0.0 || lo_px > size as f64 - 1.0 {
            return None;
        }
        Some((lo_px.max(0.0) as usize, (hi_px.min(size as f64 - 1.0)) as usize))
    };
    let u = axis(c.x, intr.fx, intr.cx, intr.width)?;
    let v = axis(c.y, intr.fy, intr.cy, intr.height)?;
    Some((u, v))
}

/// Renders camera-frame depth and texture intensity for one pose.
pub fn render_frame(scene: &Scene, pose: &SE3Pose, intr: &Intrinsics) -> (DepthMap, GrayImage) {
    let normals = frustum_normals(intr);
    let inv = pose.inverse();
    let mut objects: Vec<Footprint> = Vec::new();
    for b in &scene.boxes {
        let (c, r) = ((b.min + b.max) / 2.0, (b.max - b.min).norm() / 2.0);
        if let Some((u, v)) = footprint(c, r, &inv, intr, &normals) {
            objects.push(Footprint { shape: Shape::Box(*b), u, v });
        }
    }
    for s in &scene.spheres {
        if let Some((u, v)) = footprint(s.center, s.radius, &inv, intr, &normals) {
            objects.push(Footprint { shape: Shape::Ball(*s), u, v });
        }
    }
    let (w, h) = (intr.width, intr.height);
    let mut depth = alloc::vec![f64::NAN; w * h];
    let mut img = alloc::vec![0u8; w * h];
    let o = pose.translation;
    let mut row_objects: Vec<&Footprint> = Vec::new();
    for v in 0..h {
        row_objects.clear();
        row_objects.extend(objects.iter().filter(|f| f.v.0 <= v && v <= f.v.1));
        for u in 0..w {
            let d = pose.rotation * intr.ray(u as f64, v as f64);
            let mut best: Option<Hit> = None;
            let mut take = |h: Option<Hit>| {
                if let Some(h) = h {
                    if best.is_none_or(|b| h.s < b.s) {
                        best = Some(h);
                    }
                }
            };
            for p in &scene.planes {
                take(hit_plane(p, &o, &d));
            }
            for f in &row_objects {
                if f.u.0 <= u && u <= f.u.1 {
                    take(f.shape.hit(&o, &d));
                }
            }
            // With the ray's camera z fixed at 1 the parameter is the depth.
            if let Some(hit) = best.filter(|h| h.s <= MAX_RANGE) {
                depth[v * w + u] = hit.s;
                let len = d.norm();
                let cos = (hit.normal.dot(&d) / len).abs().max(0.05);
                let footprint = hit.s * len / (intr.fx.min(intr.fy) * cos);
                let t = scene.texture.sample_filtered(&(o + d * hit.s), footprint);
                img[v * w + u] = math::round(t * 255.0) as u8;
            }
        }
    }
    (
        DepthMap::new(w, h, depth).expect("buffer sized from intrinsics"),
        GrayImage::new(w, h, img).expect("buffer sized from intrinsics"),
    )
}

pub fn render_depth(scene: &Scene, pose: &SE3Pose, intr: &Intrinsics) -> DepthMap {
    render_frame(scene, pose, intr).0
}

pub fn render_image(scene: &Scene, pose: &SE3Pose, intr: &Intrinsics) -> GrayImage {
    render_frame(scene, pose, intr).1
}

/// A camera path along a ground-plane polyline given as `(x, z)` waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub waypoints: Vec<[f64; 2]>,
    pub poses_per_segment: usize,
    /// Odometry noise `(t_x, t_y, t_z, alpha, beta, gamma)` for downstream corruption.
    pub odometry_sigmas: [f64; 6],
    pub seed: u64,
    /// Distance ahead along the path that the camera looks at.
    pub lookahead: f64,
}

impl TrajectorySpec {
    /// A 60 m by 40 m rectangle, 500 poses, starting and ending mid-way along
    /// one long side so that the end revisits the start with the same heading.
    pub fn rectangle_loop(seed: u64) -> Self {
        TrajectorySpec {
            waypoints: alloc::vec![
                [20.0, 0.0],
                [40.0, 0.0],
                [60.0, 0.0],
                [60.0, 20.0],
                [60.0, 40.0],
                [40.0, 40.0],
                [20.0, 40.0],
                [0.0, 40.0],
                [0.0, 20.0],
                [0.0, 0.0],
                [20.0, 0.0],
            ],
            poses_per_segment: 50,
            odometry_sigmas: [0.02, 0.02, 0.02, 0.002, 0.002, 0.002],
            seed,
            lookahead: 4.0,
        }
    }

    /// A straight 80 m path that never revisits a place.
    pub fn straight_sweep(seed: u64) -> Self {
        TrajectorySpec {
            waypoints: alloc::vec![[0.0, 0.0], [40.0, 0.0], [80.0, 0.0]],
            poses_per_segment: 100,
            ..TrajectorySpec::rectangle_loop(seed)
        }
    }

    pub fn is_closed(&self) -> bool {
        self.waypoints.len() > 2 && self.waypoints.first() == self.waypoints.last()
    }

    pub fn pose_count(&self) -> usize {
        self.waypoints.len().saturating_sub(1) * self.poses_per_segment
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.waypoints.len() < 2 {
            return Err(SimError::InvalidSpec("need at least two waypoints"));
        }
        if self.waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidSpec("waypoints must be finite"));
        }
        if self.path_length() <= 0.0 {
            return Err(SimError::InvalidSpec("path has zero length"));
        }
        if self.pose_count() < 10 {
            return Err(SimError::InvalidSpec("need at least 10 poses"));
        }
        if !(self.lookahead > 0.0 && self.lookahead.is_finite()) {
            return Err(SimError::InvalidSpec("lookahead must be positive"));
        }
        if self.odometry_sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(SimError::InvalidSpec("odometry sigmas must be non-negative"));
        }
        Ok(())
    }

    pub fn path_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|s| seg_len(s[0], s[1]))
            .sum()
    }

    fn point_at(&self, mut s: f64) -> [f64; 2] {
        let total = self.path_length();
        if self.is_closed() {
            s -= math::floor(s / total) * total;
        } else {
            s = s.clamp(0.0, total);
        }
        for seg in self.waypoints.windows(2) {
            let len = seg_len(seg[0], seg[1]);
            if s <= len && len > 0.0 {
                let t = s / len;
                return [seg[0][0] + t * (seg[1][0] - seg[0][0]), seg[0][1] + t * (seg[1][1] - seg[0][1])];
            }
            s -= len;
        }
        *self.waypoints.last().expect("validated")
    }

    /// Evenly spaced camera-to-world poses. A closed path ends on an exact
    /// copy of its first pose.
    pub fn poses(&self) -> Result<Vec<SE3Pose>, SimError> {
        self.validate()?;
        let n = self.pose_count();
        let total = self.path_length();
        let step = total / (n - 1) as f64;
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let s = k as f64 * step;
            let p = self.point_at(s);
            let mut ahead = self.point_at(s + self.lookahead);
            if !self.is_closed() && s + self.lookahead > total {
                // Extend the final segment past the end of an open path.
                let w = &self.waypoints;
                let (a, b) = (w[w.len() - 2], w[w.len() - 1]);
                ahead = [p[0] + b[0] - a[0], p[1] + b[1] - a[1]];
            }
            let yaw = math::atan2(ahead[0] - p[0], ahead[1] - p[1]);
            out.push(SE3Pose::new(rot_y(yaw), Vector3::new(p[0], 0.0, p[1])));
        }
        if self.is_closed() {
            out[n - 1] = out[0];
        }
        Ok(out)
    }
}

/// Flow on frame `j`'s grid for the pair `(i, j)`, driven by `inverse(pose_i) * pose_j`.
pub fn pair_flow(depth_j: &DepthMap, pose_i: &SE3Pose, pose_j: &SE3Pose, intr: &Intrinsics) -> Result<FlowField, SimError> {
    Ok(synthesize_flow_se3(depth_j, &pose_i.between(pose_j), intr)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub poses: Vec<SE3Pose>,
    pub depths: Vec<DepthMap>,
    pub images: Vec<GrayImage>,
    /// Entry `k - 1` holds the flow of pair `(k - 1, k)`; empty when not requested.
    pub flows: Vec<FlowField>,
}

impl SimRun {
    pub fn trajectory(&self) -> crate::metrics::Trajectory {
        crate::metrics::Trajectory::from_poses(self.poses.clone())
    }

    /// Ground-truth relative motions `inverse(pose_{k-1}) * pose_k`.
    pub fn relative_motions(&self) -> Vec<SE3Pose> {
        self.poses.windows(2).map(|p| p[0].between(&p[1])).collect()
    }
}

/// Renders every pose of `spec` and, if asked, the flow of each consecutive pair.
pub fn generate_run(spec: &TrajectorySpec, scene: &Scene, intr: &Intrinsics, with_flows: bool) -> Result<SimRun, SimError> {
    let poses = spec.poses()?;
    let (depths, images): (Vec<_>, Vec<_>) = poses.iter().map(|p| render_frame(scene, p, intr)).unzip();
    let mut flows = Vec::new();
    if with_flows {
        for k in 1..poses.len() {
            flows.push(pair_flow(&depths[k], &poses[k - 1], &poses[k], intr)?);
        }
    }
    Ok(SimRun {
        poses,
        depths,
        images,
        flows,
    })
}

/// Adds independent zero-mean Gaussian noise to each motion parameter. Motion
/// `k` draws from its own stream of `seed`.
pub fn corrupt_odometry(motions: &[SE3Pose], sigmas: &[f64; 6], seed: u64) -> Vec<Motion6DoF> {
    motions
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mut rng = rng::stream(seed, rng::stage::ODOMETRY_NOISE, k as u64);
            let mut p = Motion6DoF::from_se3(m).to_array();
            for (v, s) in p.iter_mut().zip(sigmas) {
                if *s > 0.0 {
                    *v += Normal::new(0.0, *s).expect("positive sigma").sample(&mut rng);
                }
            }
            Motion6DoF::from_array(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::compose;

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 63.5, 47.5, 128, 96).unwrap()
    }

    #[test]
    fn fronto_parallel_plane_has_constant_depth() {
        let mut s = Scene::new(ValueNoise::new(1));
        s.planes.push(Plane {
            normal: Vector3::new(0.0, 0.0, 1.0),
            offset: 10.0,
        });
        let d = render_depth(&s, &SE3Pose::identity(), &intr());
        assert!(d.values().iter().all(|&z| z == 10.0));
    }

    #[test]
    fn box_silhouette_column() {
        let mut s = Scene::new(ValueNoise::new(1));
        s.boxes.push(Aabb {
            min: Vector3::new(0.0, -10.0, 5.0),
            max: Vector3::new(10.0, 10.0, 6.0),
        });
        let i = intr();
        let d = render_depth(&s, &SE3Pose::identity(), &i);
        // Front face x >= 0 at z = 5 starts at u = cx.
        let edge = i.cx;
        for u in 0..i.width {
            let hit = d.get(u, 48).is_some();
            if (u as f64) > edge + 1.0 {
                assert!(hit);
                assert_eq!(d.get(u, 48), Some(5.0));
            }
            if (u as f64) < edge - 1.0 {
                assert!(!hit);
            }
        }
    }

    #[test]
    fn facing_away_from_geometry_is_all_invalid() {
        let mut s = Scene::new(ValueNoise::new(1));
        s.planes.push(Plane {
            normal: Vector3::new(0.0, 0.0, 1.0),
            offset: 10.0,
        });
        let back = SE3Pose::new(rot_y(core::f64::consts::PI), Vector3::zeros());
        assert_eq!(render_depth(&s, &back, &intr()).valid_count(), 0);
    }

    #[test]
    fn texture_in_unit_interval() {
        let n = ValueNoise::new(9);
        for k in 0..2000 {
            let p = Vector3::new(k as f64 * 0.37, -(k as f64) * 0.11, k as f64 * 0.05 - 3.0);
            let v = n.sample(&p);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn closed_loop_repeats_first_pose() {
        let spec = TrajectorySpec::rectangle_loop(0);
        let poses = spec.poses().unwrap();
        assert_eq!(poses.len(), 500);
        assert_eq!(poses[0], poses[499]);
        let mut acc = poses[0];
        for w in poses.windows(2) {
            acc = compose(&acc, &w[0].between(&w[1]));
        }
        assert!(acc.max_abs_diff(&poses[499]) < 1e-9);
    }

    #[test]
    fn generated_scene_keeps_clear_of_path() {
        let spec = TrajectorySpec::rectangle_loop(0);
        let scene = Scene::generate(&spec, 3);
        assert!(scene.boxes.len() > 20);
        for p in spec.poses().unwrap() {
            let t = p.translation;
            for b in &scene.boxes {
                let dx = (b.min.x - t.x).max(0.0).max(t.x - b.max.x);
                let dz = (b.min.z - t.z).max(0.0).max(t.z - b.max.z);
                assert!(math::sqrt(dx * dx + dz * dz) >= 0.5);
            }
            for s in &scene.spheres {
                assert!((s.center - t).norm() - s.radius >= 0.5);
            }
        }
    }

    #[test]
    fn culling_does_not_change_the_render() {
        let spec = TrajectorySpec::rectangle_loop(0);
        let scene = Scene::generate(&spec, 4);
        let i = intr();
        let pose = spec.poses().unwrap()[137];
        let (d, img) = render_frame(&scene, &pose, &i);
        let full = |u: usize, v: usize| {
            let dir = pose.rotation * i.ray(u as f64, v as f64);
            scene.cast(&pose.translation, &dir).map(|h| h.s).filter(|s| *s <= MAX_RANGE)
        };
        for v in (0..i.height).step_by(3) {
            for u in (0..i.width).step_by(3) {
                assert_eq!(d.get(u, v), full(u, v));
            }
        }
        assert_eq!(img, render_image(&scene, &pose, &i));
    }

    #[test]
    fn odometry_noise_is_reproducible() {
        let m = [SE3Pose::identity(); 4];
        let s = [0.1; 6];
        assert_eq!(corrupt_odometry(&m, &s, 5), corrupt_odometry(&m, &s, 5));
        assert_ne!(corrupt_odometry(&m, &s, 5), corrupt_odometry(&m, &s, 6));
        assert_eq!(corrupt_odometry(&m, &[0.0; 6], 5)[2], Motion6DoF::ZERO);
    }
}
