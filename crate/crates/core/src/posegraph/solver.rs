//! Levenberg-Marquardt over node poses.
//!
//! Each free node carries a 6-vector update `(dt, dtheta)` applied on the
//! right: `t += R dt`, `R = R exp(dtheta)`. Right-side updates keep the solver
//! equivariant under a rigid motion of the whole graph. Normal equations are
//! factored by an envelope (skyline) Cholesky after a reverse Cuthill-McKee
//! ordering of the free nodes, which keeps the profile of loop-shaped graphs
//! narrow.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use super::{Matrix7, PoseGraph, PoseGraphError};
use crate::geom::{so3_exp, SE3Pose, UnitQuat};
use crate::math;

pub type Vector7 = SVector<f64, 7>;
type Matrix7x6 = SMatrix<f64, 7, 6>;
type Matrix6 = nalgebra::Matrix6<f64>;

/// Largest graph accepted by [`optimize`].
pub const MAX_NODES: usize = 2000;
/// A starting chi-square below this is treated as already optimal.
const CHI2_ZERO: f64 = 1e-20;
const LAMBDA_INIT: f64 = 1e-4;
const LAMBDA_MAX: f64 = 1e12;
const LAMBDA_MIN: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers chi-square by less than this fraction.
    pub tolerance: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            max_iterations: 100,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub graph: PoseGraph,
    pub initial_chi2: f64,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Chi-square after every accepted step.
    pub chi2_history: Vec<f64>,
}

fn aligned_quat(pred: &Matrix3<f64>, meas: &UnitQuat) -> UnitQuat {
    let q = UnitQuat::from_rotation_matrix(pred);
    if q.dot(meas) < 0.0 {
        q.negated()
    } else {
        q
    }
}

fn stack(t: Vector3<f64>, q: &UnitQuat) -> Vector7 {
    Vector7::from_column_slice(&[t.x, t.y, t.z, q.w, q.x, q.y, q.z])
}

/// Residual `(t, q)` of predicted `inverse(ni) * nj` minus the measurement,
/// with the predicted quaternion sign aligned to the measured one.
pub fn edge_residual(ni: &SE3Pose, nj: &SE3Pose, meas: &SE3Pose) -> Vector7 {
    let pred = ni.between(nj);
    let qm = meas.quaternion();
    let qp = aligned_quat(&pred.rotation, &qm);
    stack(pred.translation, &qp) - stack(meas.translation, &qm)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `d q / d dtheta` for `q * exp(dtheta)`, as a 4x3 matrix.
fn right_quat_jacobian(q: &UnitQuat) -> SMatrix<f64, 4, 3> {
    let v = Vector3::new(q.x, q.y, q.z);
    let mut m = SMatrix::<f64, 4, 3>::zeros();
    m.fixed_view_mut::<1, 3>(0, 0).copy_from(&(-v.transpose()));
    m.fixed_view_mut::<3, 3>(1, 0)
        .copy_from(&(Matrix3::identity() * q.w + skew(&v)));
    m * 0.5
}

/// Residual with its Jacobians with respect to the updates of `ni` and `nj`.
pub(crate) fn edge_linearization(ni: &SE3Pose, nj: &SE3Pose, meas: &SE3Pose) -> (Vector7, Matrix7x6, Matrix7x6) {
    let pred = ni.between(nj);
    let qm = meas.quaternion();
    let qp = aligned_quat(&pred.rotation, &qm);
    let r = stack(pred.translation, &qp) - stack(meas.translation, &qm);
    let mq = right_quat_jacobian(&qp);

    let mut ji = Matrix7x6::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-Matrix3::identity()));
    ji.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&pred.translation));
    ji.fixed_view_mut::<4, 3>(3, 3)
        .copy_from(&(-(mq * pred.rotation.transpose())));

    let mut jj = Matrix7x6::zeros();
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&pred.rotation);
    jj.fixed_view_mut::<4, 3>(3, 3).copy_from(&mq);
    (r, ji, jj)
}

fn apply_update(pose: &SE3Pose, d: &[f64]) -> SE3Pose {
    let dt = Vector3::new(d[0], d[1], d[2]);
    let dw = Vector3::new(d[3], d[4], d[5]);
    SE3Pose {
        rotation: pose.rotation * so3_exp(&dw),
        translation: pose.translation + pose.rotation * dt,
    }
}

/// Reverse Cuthill-McKee order of the free nodes. Returns `order[position] = free index`.
fn rcm_order(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = alloc::vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (adj[v].len(), v));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (adj[w].len(), w));
            next.dedup();
            for w in next {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Symmetric matrix stored by rows from each row's first structural nonzero
/// up to the diagonal.
struct Skyline {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl Skyline {
    fn new(first: Vec<usize>) -> Self {
        let mut offset = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            offset.push(acc);
            acc += i - f + 1;
        }
        offset.push(acc);
        Skyline {
            first,
            offset,
            data: alloc::vec![0.0; acc],
        }
    }

    fn dim(&self) -> usize {
        self.first.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.offset[i]..self.offset[i + 1]]
    }

    /// Adds to entry `(r, c)` with `r >= c`.
    fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r >= c && c >= self.first[r]);
        self.data[self.offset[r] + c - self.first[r]] += v;
    }

    fn diag(&self, i: usize) -> f64 {
        self.data[self.offset[i + 1] - 1]
    }

    fn set_diag(&mut self, i: usize, v: f64) {
        let k = self.offset[i + 1] - 1;
        self.data[k] = v;
    }

    /// In-place Cholesky `A = L L^T`, keeping the envelope.
    fn factor(&mut self) -> Result<(), PoseGraphError> {
        for i in 0..self.dim() {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let oj = self.offset[j];
                let mut s = self.data[oi + j - fi];
                for k in k0..j {
                    s -= self.data[oi + k - fi] * self.data[oj + k - fj];
                }
                let ljj = self.data[self.offset[j + 1] - 1];
                self.data[oi + j - fi] = s / ljj;
            }
            let row = &self.data[oi..self.offset[i + 1] - 1];
            let d = self.data[self.offset[i + 1] - 1] - row.iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0) || !d.is_finite() {
                return Err(PoseGraphError::Singular);
            }
            self.data[self.offset[i + 1] - 1] = math::sqrt(d);
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let row = self.row(i);
            let mut s = b[i];
            for (k, l) in row[..row.len() - 1].iter().enumerate() {
                s -= l * b[fi + k];
            }
            b[i] = s / row[row.len() - 1];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = self.row(i);
            let xi = b[i] / row[row.len() - 1];
            b[i] = xi;
            for (k, l) in row[..row.len() - 1].iter().enumerate() {
                b[fi + k] -= l * xi;
            }
        }
    }
}

struct Layout {
    /// Block position of each node, `None` for the anchor.
    pos: Vec<Option<usize>>,
    first: Vec<usize>,
}

fn layout(graph: &PoseGraph) -> Layout {
    let n = graph.nodes.len();
    let mut free_idx = alloc::vec![usize::MAX; n];
    let mut free = 0;
    for (v, slot) in free_idx.iter_mut().enumerate() {
        if v != graph.anchor {
            *slot = free;
            free += 1;
        }
    }
    let mut adj: Vec<Vec<usize>> = alloc::vec![Vec::new(); free];
    for e in &graph.edges {
        if e.i != graph.anchor && e.j != graph.anchor {
            adj[free_idx[e.i]].push(free_idx[e.j]);
            adj[free_idx[e.j]].push(free_idx[e.i]);
        }
    }
    let order = rcm_order(&adj);
    let mut block_of_free = alloc::vec![0; free];
    for (p, &f) in order.iter().enumerate() {
        block_of_free[f] = p;
    }
    let pos: Vec<Option<usize>> = (0..n)
        .map(|v| (v != graph.anchor).then(|| block_of_free[free_idx[v]]))
        .collect();
    let mut first_block: Vec<usize> = (0..free).collect();
    for e in &graph.edges {
        if let (Some(a), Some(b)) = (pos[e.i], pos[e.j]) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            first_block[hi] = first_block[hi].min(lo);
        }
    }
    let first = (0..6 * free).map(|r| 6 * first_block[r / 6]).collect();
    Layout { pos, first }
}

fn assemble(graph: &PoseGraph, lay: &Layout) -> Result<(Skyline, Vec<f64>), PoseGraphError> {
    let mut h = Skyline::new(lay.first.clone());
    let mut g = alloc::vec![0.0; h.dim()];
    for (k, e) in graph.edges.iter().enumerate() {
        let (r, ji, jj) = edge_linearization(&graph.nodes[e.i], &graph.nodes[e.j], &e.measurement());
        if r.iter().any(|v| !v.is_finite()) {
            return Err(PoseGraphError::NonFiniteResidual(k));
        }
        let info: &Matrix7 = &e.information;
        let blocks = [(lay.pos[e.i], ji), (lay.pos[e.j], jj)];
        let pj: [Option<Matrix7x6>; 2] = [
            blocks[0].0.map(|_| info * blocks[0].1),
            blocks[1].0.map(|_| info * blocks[1].1),
        ];
        for a in 0..2 {
            let (Some(pa), Some(wa)) = (blocks[a].0, pj[a].as_ref()) else {
                continue;
            };
            let ga = wa.transpose() * r;
            for x in 0..6 {
                g[6 * pa + x] += ga[x];
            }
            for b in 0..2 {
                let Some(pb) = blocks[b].0 else { continue };
                if pb > pa {
                    continue;
                }
                // Block (pa, pb) of the lower triangle: J_a^T P J_b.
                let hab: Matrix6 = wa.transpose() * blocks[b].1;
                for x in 0..6 {
                    for y in 0..6 {
                        let (row, col) = (6 * pa + x, 6 * pb + y);
                        if row >= col && (pa != pb || a == b) {
                            h.add(row, col, hab[(x, y)]);
                        }
                    }
                }
            }
        }
    }
    Ok((h, g))
}

fn chi2_of(graph: &PoseGraph, nodes: &[SE3Pose]) -> f64 {
    graph
        .edges
        .iter()
        .map(|e| {
            let r = edge_residual(&nodes[e.i], &nodes[e.j], &e.measurement());
            (r.transpose() * e.information * r)[(0, 0)]
        })
        .sum()
}

/// Minimizes the weighted residual over all non-anchor node poses.
pub fn optimize(graph: &PoseGraph, cfg: &OptimizeConfig) -> Result<OptimizeReport, PoseGraphError> {
    if !(cfg.tolerance >= 0.0) {
        return Err(PoseGraphError::InvalidParameter("tolerance must be non-negative"));
    }
    if graph.nodes.len() > MAX_NODES {
        return Err(PoseGraphError::TooLarge(graph.nodes.len()));
    }
    graph.validate()?;
    let initial = graph.chi2()?;
    let mut report = OptimizeReport {
        graph: graph.clone(),
        initial_chi2: initial,
        chi2: initial,
        iterations: 0,
        converged: true,
        chi2_history: Vec::new(),
    };
    if initial < CHI2_ZERO || graph.nodes.len() < 2 {
        return Ok(report);
    }
    report.converged = false;
    let lay = layout(graph);
    let mut lambda = LAMBDA_INIT;
    let mut chi2 = initial;
    'outer: while report.iterations < cfg.max_iterations {
        report.iterations += 1;
        let (h, g) = assemble(&report.graph, &lay)?;
        let diag: Vec<f64> = (0..h.dim()).map(|i| h.diag(i)).collect();
        let dmax = diag.iter().fold(0.0f64, |a, &b| a.max(b));
        loop {
            let mut damped = Skyline {
                first: h.first.clone(),
                offset: h.offset.clone(),
                data: h.data.clone(),
            };
            for (i, &d) in diag.iter().enumerate() {
                let d = d.max(1e-12 * dmax);
                damped.set_diag(i, d + lambda * d);
            }
            let step = match damped.factor() {
                Ok(()) => {
                    let mut delta: Vec<f64> = g.iter().map(|v| -v).collect();
                    damped.solve(&mut delta);
                    Some(delta)
                }
                Err(_) => None,
            };
            if let Some(delta) = step {
                let nodes: Vec<SE3Pose> = report
                    .graph
                    .nodes
                    .iter()
                    .zip(&lay.pos)
                    .map(|(p, pos)| match pos {
                        Some(b) => apply_update(p, &delta[6 * b..6 * b + 6]),
                        None => *p,
                    })
                    .collect();
                let new_chi2 = chi2_of(&report.graph, &nodes);
                if new_chi2.is_finite() && new_chi2 < chi2 {
                    let rel = (chi2 - new_chi2) / chi2;
                    report.graph.nodes = nodes;
                    chi2 = new_chi2;
                    report.chi2_history.push(chi2);
                    lambda = (lambda / 10.0).max(LAMBDA_MIN);
                    if rel < cfg.tolerance || chi2 < CHI2_ZERO {
                        report.converged = true;
                        break 'outer;
                    }
                    continue 'outer;
                }
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                // No descent direction left at machine precision.
                report.converged = true;
                break 'outer;
            }
        }
    }
    report.chi2 = chi2;
    Ok(report)
}
