//! Pose-graph back end.
//!
//! Nodes are camera-to-world poses. An edge `(i, j)` measures
//! `inverse(node_i) * node_j`, the same relative motion the odometry front end
//! reports for the frame pair, so consecutive nodes chain as
//! `node_{k+1} = node_k * motion_k`.

mod information;
mod solver;

use alloc::vec::Vec;

use thiserror::Error;

use crate::geom::{Motion6DoF, SE3Pose};
use crate::reloc::LoopCandidate;
use crate::vo::MotionEstimate;

pub use information::{
    covariance_q, information_from_minimal, information_from_q, information_to_minimal,
    parametrization_jacobian, tangent_basis, HyperParams, InverseMode, Matrix7, Matrix7x6,
    SigmaParams, PINV_CUTOFF, RIDGE_EPS,
};
pub use solver::{edge_residual, optimize, OptimizeConfig, OptimizeReport, MAX_NODES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseGraphError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("covariance is not symmetric positive semidefinite")]
    NotPsd,
    #[error("edge {edge} references missing node (graph has {nodes} nodes)")]
    MissingNode { edge: usize, nodes: usize },
    #[error("edge {0} connects a node to itself")]
    SelfLoop(usize),
    #[error("odometry is empty")]
    EmptyOdometry,
    #[error("graph is disconnected: node {0} is unreachable from the anchor")]
    Disconnected(usize),
    #[error("non-finite residual on edge {0}")]
    NonFiniteResidual(usize),
    #[error("graph has {0} nodes, more than the solver supports")]
    TooLarge(usize),
    #[error("normal equations are not positive definite")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Consecutive,
    Loop,
}

/// Which covariance feeds each edge's information matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InformationSource {
    /// The global diagonal covariance from [`SigmaParams`] and [`HyperParams`].
    #[default]
    Global,
    /// The estimator's own covariance, scaled by `C_si` and `C_r`. Edges whose
    /// covariance is unusable fall back to the global one.
    PerEdge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionEdge {
    pub i: usize,
    pub j: usize,
    pub motion: Motion6DoF,
    pub information: Matrix7,
    pub kind: EdgeKind,
}

impl MotionEdge {
    pub fn measurement(&self) -> SE3Pose {
        self.motion.to_se3()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    pub nodes: Vec<SE3Pose>,
    pub edges: Vec<MotionEdge>,
    pub anchor: usize,
}

impl PoseGraph {
    pub fn new(nodes: Vec<SE3Pose>, edges: Vec<MotionEdge>, anchor: usize) -> Self {
        PoseGraph {
            nodes,
            edges,
            anchor,
        }
    }

    pub fn loop_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Loop).count()
    }

    /// Checks edge endpoints and reachability of every node from the anchor.
    pub fn validate(&self) -> Result<(), PoseGraphError> {
        let n = self.nodes.len();
        if self.anchor >= n {
            return Err(PoseGraphError::InvalidParameter("anchor is not a node"));
        }
        let mut adj: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
        for (k, e) in self.edges.iter().enumerate() {
            if e.i >= n || e.j >= n {
                return Err(PoseGraphError::MissingNode { edge: k, nodes: n });
            }
            if e.i == e.j {
                return Err(PoseGraphError::SelfLoop(k));
            }
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        let mut seen = alloc::vec![false; n];
        let mut stack = alloc::vec![self.anchor];
        seen[self.anchor] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(v) => Err(PoseGraphError::Disconnected(v)),
            None => Ok(()),
        }
    }

    /// Total weighted squared residual.
    pub fn chi2(&self) -> Result<f64, PoseGraphError> {
        let mut total = 0.0;
        for (k, e) in self.edges.iter().enumerate() {
            let r = edge_residual(&self.nodes[e.i], &self.nodes[e.j], &e.measurement());
            let c = (r.transpose() * e.information * r)[(0, 0)];
            if !c.is_finite() {
                return Err(PoseGraphError::NonFiniteResidual(k));
            }
            total += c;
        }
        Ok(total)
    }
}

fn scaled_edge_covariance(cov: &nalgebra::Matrix6<f64>, hp: &HyperParams) -> nalgebra::Matrix6<f64> {
    let r = crate::math::sqrt(hp.c_r);
    let s = nalgebra::Matrix6::from_diagonal(&nalgebra::Vector6::new(1.0, 1.0, 1.0, r, r, r));
    (s * cov * s) * hp.c_si
}

fn edge_information(
    est: &MotionEstimate,
    global_q: &nalgebra::Matrix6<f64>,
    hp: &HyperParams,
    source: InformationSource,
    mode: InverseMode,
) -> Result<Matrix7, PoseGraphError> {
    if source == InformationSource::PerEdge {
        let q = scaled_edge_covariance(&est.covariance, hp);
        if let Ok(info) = information_from_q(&q, &est.motion, mode) {
            if info.iter().all(|v| v.is_finite()) && info.amax() > 0.0 {
                return Ok(info);
            }
        }
    }
    information_from_q(global_q, &est.motion, mode)
}

/// Options for [`build_graph`] beyond the sigma and hyperparameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildOptions {
    pub source: InformationSource,
    pub inverse: InverseMode,
}

/// Builds the graph: nodes chained from odometry starting at identity, one
/// edge per odometry estimate and one per passed loop candidate.
pub fn build_graph(
    odometry: &[MotionEstimate],
    loops: &[(LoopCandidate, MotionEstimate)],
    sigmas: &SigmaParams,
    hp: &HyperParams,
    opts: BuildOptions,
) -> Result<PoseGraph, PoseGraphError> {
    sigmas.validate()?;
    hp.validate()?;
    if odometry.is_empty() {
        return Err(PoseGraphError::EmptyOdometry);
    }
    let q = covariance_q(sigmas, hp);
    let n = odometry.len() + 1;
    let mut nodes = Vec::with_capacity(n);
    nodes.push(SE3Pose::identity());
    let mut edges = Vec::with_capacity(odometry.len() + loops.len());
    for (k, est) in odometry.iter().enumerate() {
        let next = nodes[k].compose(&est.motion.to_se3());
        nodes.push(next);
        edges.push(MotionEdge {
            i: k,
            j: k + 1,
            motion: est.motion,
            information: edge_information(est, &q, hp, opts.source, opts.inverse)?,
            kind: EdgeKind::Consecutive,
        });
    }
    for (cand, est) in loops.iter().filter(|(c, _)| c.passed) {
        if cand.i >= n || cand.j >= n {
            return Err(PoseGraphError::MissingNode {
                edge: edges.len(),
                nodes: n,
            });
        }
        if cand.i == cand.j {
            return Err(PoseGraphError::SelfLoop(edges.len()));
        }
        edges.push(MotionEdge {
            i: cand.i,
            j: cand.j,
            motion: est.motion,
            information: edge_information(est, &q, hp, opts.source, opts.inverse)?,
            kind: EdgeKind::Loop,
        });
    }
    Ok(PoseGraph::new(nodes, edges, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix6;

    fn est(m: Motion6DoF) -> MotionEstimate {
        MotionEstimate::from_motion(m, Matrix6::identity() * 1e-4)
    }

    #[test]
    fn two_nodes_one_edge() {
        let m = Motion6DoF::new(0.1, 0.0, 0.4, 0.01, 0.02, -0.03);
        let g = build_graph(&[est(m)], &[], &SigmaParams::default(), &HyperParams::default(), BuildOptions::default()).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.nodes[1], m.to_se3());
        assert_eq!(g.anchor, 0);
    }

    #[test]
    fn loops_add_only_passed_edges() {
        let m = Motion6DoF::new(0.0, 0.0, 0.4, 0.0, 0.05, 0.0);
        let odo: Vec<_> = (0..9).map(|_| est(m)).collect();
        let pass = LoopCandidate {
            i: 0,
            j: 8,
            matches: 40,
            passed: true,
        };
        let fail = LoopCandidate {
            passed: false,
            ..pass
        };
        let g = build_graph(
            &odo,
            &[(pass, est(m)), (fail, est(m))],
            &SigmaParams::default(),
            &HyperParams::default(),
            BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(g.edges.len(), 9 + 1);
        assert_eq!(g.loop_edge_count(), 1);
    }

    #[test]
    fn missing_loop_node_is_rejected() {
        let m = Motion6DoF::ZERO;
        let bad = LoopCandidate {
            i: 0,
            j: 5,
            matches: 40,
            passed: true,
        };
        let err = build_graph(&[est(m)], &[(bad, est(m))], &SigmaParams::default(), &HyperParams::default(), BuildOptions::default());
        assert!(matches!(err, Err(PoseGraphError::MissingNode { .. })));
    }

    #[test]
    fn per_edge_covariance_is_used_when_valid() {
        let m = Motion6DoF::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let mut e = est(m);
        e.covariance = Matrix6::identity() * 4.0;
        let hp = HyperParams {
            c_si: 1.0,
            c_r: 1.0,
            t_loop: 1,
        };
        let opts = BuildOptions {
            source: InformationSource::PerEdge,
            ..Default::default()
        };
        let g = build_graph(&[e], &[], &SigmaParams::default(), &hp, opts).unwrap();
        assert!((g.edges[0].information[(0, 0)] - 0.25).abs() < 1e-12);
        e.covariance[(0, 0)] = f64::NAN;
        let g = build_graph(&[e], &[], &SigmaParams::default(), &hp, opts).unwrap();
        assert!((g.edges[0].information[(0, 0)] - 1.0 / 0.0004).abs() < 1e-6);
    }

    #[test]
    fn disconnected_graph_is_detected() {
        let mut g = build_graph(&[est(Motion6DoF::ZERO)], &[], &SigmaParams::default(), &HyperParams::default(), BuildOptions::default()).unwrap();
        g.nodes.push(SE3Pose::identity());
        assert_eq!(g.validate(), Err(PoseGraphError::Disconnected(2)));
    }
}
