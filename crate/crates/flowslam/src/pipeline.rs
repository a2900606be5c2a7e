//! Data-parallel stages.
//!
//! Work is split by frame or frame pair and collected in input order, so every
//! result is independent of the number of worker threads.

use std::collections::HashMap;

use flowslam_core::flowsynth::{generate_training_pair, FlowSynthError};
use flowslam_core::geom::Motion6DoF;
use flowslam_core::posegraph::{build_graph, optimize, BuildOptions, OptimizeReport, PoseGraph, PoseGraphError};
use flowslam_core::reloc::{
    build_vocabulary, extract_features, verify, BinaryDescriptor, BowHistogram, Database, Feature, FeatureConfig,
    GrayImage, LoopCandidate, LoopParams, RelocError, Vocabulary,
};
use flowslam_core::rng::{self, stage};
use flowslam_core::sim::{pair_flow, render_frame, Scene, SimError, SimRun, TrajectorySpec};
use flowslam_core::vo::{estimate_motion, EstimatorConfig, EstimatorPolicy, MotionEstimate, VoError};
use flowslam_core::{DepthMap, FlowField, Intrinsics, MotionModel, SE3Pose};
use nalgebra::Matrix6;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::io::{MotionRecord, RelocConfig, RunConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reloc(#[from] RelocError),
    #[error(transparent)]
    Flow(#[from] FlowSynthError),
    #[error(transparent)]
    Graph(#[from] PoseGraphError),
    #[error("frame pair ({i}, {j}): {source}")]
    Vo {
        i: usize,
        j: usize,
        #[source]
        source: VoError,
    },
    #[error("{0}")]
    Input(String),
}

/// Renders every pose of `spec` and, on request, the flow of each consecutive pair.
pub fn simulate(spec: &TrajectorySpec, scene: &Scene, intr: &Intrinsics, with_flows: bool) -> Result<SimRun, SimError> {
    let poses = spec.poses()?;
    let (depths, images): (Vec<DepthMap>, Vec<GrayImage>) =
        poses.par_iter().map(|p| render_frame(scene, p, intr)).unzip();
    let flows = if with_flows {
        flows_for(&poses, &depths, intr)?
    } else {
        Vec::new()
    };
    Ok(SimRun {
        poses,
        depths,
        images,
        flows,
    })
}

/// Flow of pair `(k - 1, k)` at index `k - 1`, on frame `k`'s grid.
pub fn flows_for(poses: &[SE3Pose], depths: &[DepthMap], intr: &Intrinsics) -> Result<Vec<FlowField>, SimError> {
    (1..poses.len())
        .into_par_iter()
        .map(|k| pair_flow(&depths[k], &poses[k - 1], &poses[k], intr))
        .collect()
}

pub fn extract_all(images: &[GrayImage], cfg: &FeatureConfig) -> Result<Vec<Vec<Feature>>, RelocError> {
    images.par_iter().map(|im| extract_features(im, cfg)).collect()
}

/// Vocabulary from the descriptors of every `vocabulary_stride`-th frame.
/// Fewer distinct descriptors than words shrink the vocabulary to fit.
pub fn vocabulary_for(features: &[Vec<Feature>], cfg: &RelocConfig, seed: u64) -> Result<Vocabulary, RelocError> {
    let pool: Vec<BinaryDescriptor> = features
        .iter()
        .step_by(cfg.vocabulary_stride.max(1))
        .flatten()
        .map(|f| f.descriptor)
        .collect();
    let mut distinct = pool.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let k = cfg.vocabulary_size.min(distinct.len()).max(1);
    build_vocabulary(&pool, k, seed)
}

/// Same pairs as `reloc::retrieval_pairs`, with queries run in parallel.
pub fn retrieval_pairs(histograms: &[BowHistogram], params: &LoopParams) -> Vec<(usize, usize)> {
    let mut db = Database::new();
    for h in histograms {
        db.insert(h.clone());
    }
    let mut pairs: Vec<(usize, usize)> = histograms
        .par_iter()
        .flat_map_iter(|h| {
            db.query(h, params.top_k, Some(params.t_loop))
                .into_iter()
                .map(move |r| (h.frame.min(r.frame), h.frame.max(r.frame)))
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Every retrieved pair with its verification result, sorted by `(i, j)`.
/// Keeping only the passed ones gives `reloc::detect_loops`.
pub fn verified_pairs(features: &[Vec<Feature>], vocab: &Vocabulary, params: &LoopParams) -> Vec<LoopCandidate> {
    let hists: Vec<BowHistogram> = features
        .par_iter()
        .enumerate()
        .map(|(k, f)| vocab.histogram(k, f))
        .collect();
    retrieval_pairs(&hists, params)
        .into_par_iter()
        .map(|(i, j)| verify(i, &features[i], j, &features[j], params.ratio, params.n_th))
        .collect()
}

/// Consecutive motions from the flow sequence; `flows[k - 1]` belongs to `depths[k]`.
pub fn estimate_odometry(
    flows: &[FlowField],
    depths: &[DepthMap],
    intr: &Intrinsics,
    cfg: &EstimatorConfig,
) -> Result<Vec<MotionEstimate>, PipelineError> {
    if flows.len() + 1 != depths.len() {
        return Err(PipelineError::Input(format!(
            "{} flows for {} depth frames; expected one per consecutive pair",
            flows.len(),
            depths.len()
        )));
    }
    flows
        .par_iter()
        .enumerate()
        .map(|(k, f)| {
            estimate_motion(f, &depths[k + 1], intr, cfg).map_err(|source| PipelineError::Vo {
                i: k,
                j: k + 1,
                source,
            })
        })
        .collect()
}

/// Integrates relative motions from the identity.
pub fn integrate(motions: &[Motion6DoF]) -> Vec<SE3Pose> {
    let mut poses = vec![SE3Pose::identity()];
    for m in motions {
        let next = poses.last().expect("non-empty").compose(&m.to_se3());
        poses.push(next);
    }
    poses
}

/// Where the relative motion of a frame pair comes from.
#[derive(Debug, Clone)]
pub enum MotionSource {
    /// Geometric estimation from flow. Loop pairs take their flow from
    /// `loop_flows` when present, else from the ground-truth poses and depth.
    Geometric(EstimatorConfig),
    /// Motions predicted elsewhere, keyed by `(i, j)`.
    External(HashMap<(usize, usize), Motion6DoF>),
}

/// Inputs a loop-motion source may need.
pub struct LoopInputs<'a> {
    pub intr: &'a Intrinsics,
    pub depths: &'a [DepthMap],
    pub ground_truth: Option<&'a [SE3Pose]>,
    pub loop_flows: &'a HashMap<(usize, usize), FlowField>,
}

/// Motion of pair `(i, j)` from `source`. External motions carry an identity covariance.
pub fn pair_motion(
    source: &MotionSource,
    i: usize,
    j: usize,
    inputs: &LoopInputs,
) -> Result<MotionEstimate, PipelineError> {
    match source {
        MotionSource::External(map) => map
            .get(&(i, j))
            .map(|m| MotionEstimate::from_motion(*m, Matrix6::identity()))
            .ok_or_else(|| PipelineError::Input(format!("no predicted motion for pair ({i}, {j})"))),
        MotionSource::Geometric(cfg) => {
            let depth = inputs
                .depths
                .get(j)
                .ok_or_else(|| PipelineError::Input(format!("no depth for frame {j}")))?;
            let oracle;
            let flow = match inputs.loop_flows.get(&(i, j)) {
                Some(f) => f,
                None => {
                    let gt = inputs.ground_truth.ok_or_else(|| {
                        PipelineError::Input(format!("no flow for pair ({i}, {j}) and no ground truth to derive it"))
                    })?;
                    oracle = pair_flow(depth, &gt[i], &gt[j], inputs.intr)?;
                    &oracle
                }
            };
            estimate_motion(flow, depth, inputs.intr, cfg).map_err(|source| PipelineError::Vo { i, j, source })
        }
    }
}

#[derive(Debug, Clone)]
pub struct SlamOutcome {
    /// Every verified retrieval pair, passed or not.
    pub candidates: Vec<LoopCandidate>,
    /// Passed candidates with their motions.
    pub loops: Vec<(LoopCandidate, MotionEstimate)>,
    /// Passed candidates whose motion could not be estimated.
    pub dropped: Vec<(LoopCandidate, String)>,
    pub initial: PoseGraph,
    pub report: OptimizeReport,
}

/// Relocalization, loop motions and graph optimization on top of odometry.
pub fn run_slam(
    odometry: &[MotionEstimate],
    features: &[Vec<Feature>],
    vocab: Option<&Vocabulary>,
    policy: &EstimatorPolicy<MotionSource>,
    inputs: &LoopInputs,
    cfg: &RunConfig,
) -> Result<SlamOutcome, PipelineError> {
    let mut params = cfg.reloc.loops;
    params.t_loop = policy.t_loop;
    let candidates = match vocab {
        Some(v) if policy.t_loop < features.len() => verified_pairs(features, v, &params),
        _ => Vec::new(),
    };
    let estimated: Vec<(LoopCandidate, Result<MotionEstimate, PipelineError>)> = candidates
        .par_iter()
        .filter(|c| c.passed)
        .map(|c| (*c, pair_motion(policy.source(c.j - c.i), c.i, c.j, inputs)))
        .collect();
    let mut loops = Vec::new();
    let mut dropped = Vec::new();
    for (c, r) in estimated {
        match r {
            Ok(e) => loops.push((c, e)),
            Err(PipelineError::Vo { source, .. }) => dropped.push((c, source.to_string())),
            Err(e) => return Err(e),
        }
    }
    let opts = BuildOptions {
        source: cfg.slam.information,
        inverse: cfg.slam.inverse,
    };
    let hp = flowslam_core::posegraph::HyperParams {
        t_loop: policy.t_loop,
        ..cfg.slam.hyper
    };
    let initial = build_graph(odometry, &loops, &cfg.slam.sigmas, &hp, opts)?;
    let report = optimize(&initial, &cfg.slam.optimizer)?;
    Ok(SlamOutcome {
        candidates,
        loops,
        dropped,
        initial,
        report,
    })
}

/// `count` training samples. Sample `k` draws its depth frame and motion from
/// its own random stream, so any subset can be regenerated alone.
pub fn synth_batch(
    depths: &[DepthMap],
    model: &MotionModel,
    intr: &Intrinsics,
    seed: u64,
    range: std::ops::Range<usize>,
) -> Result<Vec<(MotionRecord, FlowField)>, PipelineError> {
    if depths.is_empty() {
        return Err(PipelineError::Input("no depth maps to synthesize from".into()));
    }
    range
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(seed, stage::SYNTH, k as u64);
            let frame = rng.random_range(0..depths.len());
            let (flow, motion) = generate_training_pair(&depths[frame], model, &mut rng, intr)?;
            Ok((
                MotionRecord {
                    sample: k,
                    depth_frame: frame,
                    motion,
                },
                flow,
            ))
        })
        .collect()
}
