//! The `flowslam` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
//! 4 numerical failure with no usable result.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowslam_core::geom::Motion6DoF;
use flowslam_core::metrics::{ate, kitti_errors, rpe, Alignment, MetricsError};
use flowslam_core::motionmodel::{self, MotionModelError};
use flowslam_core::posegraph::PoseGraphError;
use flowslam_core::reloc::RelocError;
use flowslam_core::vo::{EstimatorPolicy, MotionEstimate};
use flowslam_core::{Intrinsics, MotionModel, SE3Pose, Trajectory};
use nalgebra::Matrix6;
use rayon::prelude::*;
use thiserror::Error;

use crate::io::{
    self, load_config, os_error, read_kitti_poses, read_motion_records, read_predictions, read_tum_trajectory,
    write_candidates, write_file, write_flo, write_g2o, write_kitti_poses, write_manifest, write_motion_records,
    write_predictions, write_vocabulary, ConfigError, G2oGraph, IoError, Manifest, Prediction, RunConfig,
};
use crate::pipeline::{self, LoopInputs, MotionSource, PipelineError};
use crate::sequence::{self, SequenceError};

/// Master seed used when `--seed` is absent.
pub const DEFAULT_SEED: u64 = 0;
/// Training samples generated and written per batch by `synth`.
const SYNTH_BATCH: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "flowslam", version, about = "Synthetic flow generation, flow odometry and pose-graph SLAM")]
pub struct Cli {
    /// Master seed; every random stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize training flows from depth maps and a motion model.
    Synth(SynthArgs),
    /// Fit a per-component Student-t motion model.
    FitMotion(FitArgs),
    /// Relative motions and the integrated trajectory of a flow sequence.
    Vo(VoArgs),
    /// Odometry, loop closure and pose-graph optimization on a sequence directory.
    Slam(SlamArgs),
    /// Compare an estimated trajectory with ground truth.
    Eval(EvalArgs),
    /// Render a synthetic sequence and run SLAM on it.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of 16-bit depth rasters named 000000.png, 000001.png, ...
    #[arg(long, conflicts_with = "sim")]
    pub depth_dir: Option<PathBuf>,
    /// Render depth maps from the simulator configured by this file instead.
    #[arg(long)]
    pub sim: Option<PathBuf>,
    /// File with a `[camera]` section. Defaults to `camera.ini` beside the depth directory.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Motion model file as written by `fit-motion`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// KITTI pose file; consecutive relative motions are fitted.
    #[arg(long, group = "input")]
    pub poses: Option<PathBuf>,
    /// Motion records as written by `synth`.
    #[arg(long, group = "input")]
    pub motions: Option<PathBuf>,
    /// Relative-motion prediction file.
    #[arg(long, group = "input")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VoArgs {
    /// Flow directory: 000001.flo holds pair (0, 1), and so on.
    #[arg(long, requires = "depth_dir")]
    pub flow_dir: Option<PathBuf>,
    #[arg(long)]
    pub depth_dir: Option<PathBuf>,
    /// Use these predicted motions instead of estimating them from flow.
    #[arg(long, conflicts_with_all = ["flow_dir", "depth_dir"])]
    pub predictions: Option<PathBuf>,
    /// File with a `[camera]` section.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Run configuration; its `[vo]` and `[camera]` sections apply.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SlamArgs {
    /// Sequence directory.
    pub sequence: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Consecutive motions from this prediction file instead of flow odometry.
    #[arg(long)]
    pub odometry: Option<PathBuf>,
    /// Loop-pair motions from this prediction file instead of flow.
    #[arg(long)]
    pub loop_predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoseFormat {
    Kitti,
    Tum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlignArg {
    None,
    Rigid,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long, value_enum, default_value_t = PoseFormat::Kitti)]
    pub format: PoseFormat,
    #[arg(long, value_enum, default_value_t = AlignArg::Rigid)]
    pub align: AlignArg,
    /// Frame offset for the relative pose error.
    #[arg(long, default_value_t = 1)]
    pub rpe_delta: usize,
    /// Also report KITTI sub-sequence errors (needs at least 100 m of path).
    #[arg(long)]
    pub kitti: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Run configuration; `[sim]` and `[camera]` shape the rendered sequence.
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Only write the sequence.
    #[arg(long)]
    pub no_slam: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Graph(g) => g.into(),
            PipelineError::Reloc(r) => r.into(),
            PipelineError::Vo { .. } => CliError::Numerical(e.to_string()),
            PipelineError::Sim(_) | PipelineError::Flow(_) | PipelineError::Input(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<PoseGraphError> for CliError {
    fn from(e: PoseGraphError) -> Self {
        match e {
            PoseGraphError::Singular | PoseGraphError::NonFiniteResidual(_) | PoseGraphError::NotPsd => {
                CliError::Numerical(format!("graph optimization failed: {e}"))
            }
            _ => CliError::Usage(format!("pose graph: {e}")),
        }
    }
}

impl From<RelocError> for CliError {
    fn from(e: RelocError) -> Self {
        CliError::Usage(format!("relocalization: {e}"))
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SequenceError> for CliError {
    fn from(e: SequenceError) -> Self {
        match e {
            SequenceError::Io(e) => e.into(),
            SequenceError::Sim(e) => CliError::Usage(e.to_string()),
        }
    }
}

fn progress(stage: &str, msg: std::fmt::Arguments) {
    eprintln!("[{stage}] {msg}");
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            b = b.num_threads(n as usize);
        }
        b.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))?
    };
    let seed = cli.seed;
    pool.install(|| match cli.command {
        Command::Synth(a) => synth(&a, seed),
        Command::FitMotion(a) => fit_motion(&a),
        Command::Vo(a) => vo(&a),
        Command::Slam(a) => slam(&a, seed).map(|_| ()),
        Command::Eval(a) => eval(&a),
        Command::Simulate(a) => simulate(&a, seed),
    })
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(os_error(path))?;
    Ok(())
}

fn load_or_default(path: Option<&Path>) -> Result<RunConfig, CliError> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    })
}

/// Intrinsics from the first source that has a `[camera]` section.
fn resolve_camera(explicit: Option<&Path>, config: &RunConfig, fallback: Option<&Path>) -> Result<Intrinsics, CliError> {
    if let Some(p) = explicit {
        return load_config(p)?
            .camera
            .ok_or_else(|| CliError::Usage(format!("{}: no [camera] section", p.display())));
    }
    if let Some(c) = config.camera {
        return Ok(c);
    }
    if let Some(p) = fallback.filter(|p| p.is_file()) {
        if let Some(c) = load_config(p)?.camera {
            return Ok(c);
        }
    }
    Err(CliError::Usage(
        "missing camera intrinsics: pass --camera or add a [camera] section".into(),
    ))
}

fn synth(a: &SynthArgs, seed: u64) -> Result<(), CliError> {
    let text = io::read_text(&a.model)?;
    let model = MotionModel::from_record(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.model.display())))?;
    let (depths, intr, source) = match (&a.depth_dir, &a.sim) {
        (Some(dir), None) => {
            let depths = sequence::read_depth_dir(dir)?;
            let fallback = dir.parent().map(|p| p.join(sequence::CAMERA_FILE));
            let intr = resolve_camera(a.camera.as_deref(), &RunConfig::default(), fallback.as_deref())?;
            (depths, intr, dir.display().to_string())
        }
        (None, Some(spec)) => {
            let cfg = load_config(spec)?;
            let intr = match a.camera.as_deref() {
                Some(p) => resolve_camera(Some(p), &cfg, None)?,
                None => cfg.camera.unwrap_or_else(sequence::sim_camera),
            };
            let sim = io::SimConfig {
                write_flows: false,
                ..cfg.sim
            };
            let t = Instant::now();
            let run = sequence::simulate_sequence(&sim, seed, &intr).map_err(SequenceError::from)?;
            progress("synth", format_args!("rendered {} depth maps in {:.1?}", run.depths.len(), t.elapsed()));
            (run.depths, intr, format!("sim:{}", spec.display()))
        }
        _ => return Err(CliError::Usage("give exactly one of --depth-dir or --sim".into())),
    };
    for d in &depths {
        if (d.width(), d.height()) != (intr.width, intr.height) {
            return Err(CliError::Usage(format!(
                "depth maps are {}x{} but the camera is {}x{}",
                d.width(),
                d.height(),
                intr.width,
                intr.height
            )));
        }
    }
    let flow_dir = a.out.join(sequence::FLOW_DIR);
    ensure_dir(&flow_dir)?;
    let mut records = Vec::with_capacity(a.count);
    let mut start = 0;
    while start < a.count {
        let end = (start + SYNTH_BATCH).min(a.count);
        let batch = pipeline::synth_batch(&depths, &model, &intr, seed, start..end)?;
        batch
            .par_iter()
            .try_for_each(|(r, f)| write_flo(&flow_dir.join(sequence::frame_name(r.sample, "flo")), f))?;
        records.extend(batch.into_iter().map(|(r, _)| r));
        progress("synth", format_args!("{end}/{} samples", a.count));
        start = end;
    }
    write_motion_records(&a.out.join("motions.txt"), &records)?;
    let mut m = Manifest::default();
    m.push("command", "synth");
    m.push("seed", seed);
    m.push("source", source);
    m.push("depth_frames", depths.len());
    m.push("count", a.count);
    write_manifest(&a.out.join(sequence::MANIFEST_FILE), &m)?;
    Ok(())
}

fn fit_motion(a: &FitArgs) -> Result<(), CliError> {
    let motions: Vec<Motion6DoF> = match (&a.poses, &a.motions, &a.predictions) {
        (Some(p), None, None) => {
            let t = read_kitti_poses(p)?;
            t.poses().windows(2).map(|w| Motion6DoF::from_se3(&w[0].between(&w[1]))).collect()
        }
        (None, Some(p), None) => read_motion_records(p)?.into_iter().map(|r| r.motion).collect(),
        (None, None, Some(p)) => read_predictions(p)?.into_iter().map(|r| r.motion).collect(),
        _ => return Err(CliError::Usage("give one of --poses, --motions or --predictions".into())),
    };
    let report = motionmodel::fit(&motions).map_err(|e| match e {
        MotionModelError::TooFewSamples(_) | MotionModelError::NonFiniteSample(_) => CliError::Usage(e.to_string()),
        _ => CliError::Numerical(format!("motion model fit failed: {e}")),
    })?;
    for (name, f) in motionmodel::DOF_NAMES.iter().zip(&report.marginals) {
        if !f.converged {
            progress("fit-motion", format_args!("{name}: EM stopped at the iteration limit"));
        }
    }
    write_file(&a.out, report.model.to_record().as_bytes())?;
    Ok(())
}

fn predictions_to_odometry(preds: &[Prediction], path: &Path) -> Result<Vec<MotionEstimate>, CliError> {
    for (k, p) in preds.iter().enumerate() {
        if (p.i, p.j) != (k, k + 1) {
            return Err(CliError::Usage(format!(
                "{}: entry {} is pair ({}, {}); expected ({k}, {}) for consecutive odometry",
                path.display(),
                k + 1,
                p.i,
                p.j,
                k + 1
            )));
        }
    }
    if preds.is_empty() {
        return Err(CliError::Usage(format!("{}: no motions", path.display())));
    }
    Ok(preds.iter().map(|p| MotionEstimate::from_motion(p.motion, Matrix6::identity())).collect())
}

fn odometry_predictions(odo: &[MotionEstimate]) -> Vec<Prediction> {
    odo.iter()
        .enumerate()
        .map(|(k, e)| Prediction {
            i: k,
            j: k + 1,
            motion: e.motion,
        })
        .collect()
}

fn integrated(odo: &[MotionEstimate]) -> Trajectory {
    let motions: Vec<Motion6DoF> = odo.iter().map(|e| e.motion).collect();
    Trajectory::from_poses(pipeline::integrate(&motions))
}

fn vo(a: &VoArgs) -> Result<(), CliError> {
    let cfg = load_or_default(a.config.as_deref())?;
    let odo = match &a.predictions {
        Some(p) => predictions_to_odometry(&read_predictions(p)?, p)?,
        None => {
            let (Some(flow_dir), Some(depth_dir)) = (&a.flow_dir, &a.depth_dir) else {
                return Err(CliError::Usage("give --flow-dir and --depth-dir, or --predictions".into()));
            };
            let intr = resolve_camera(a.camera.as_deref(), &cfg, None)?;
            let depths = sequence::read_depth_dir(depth_dir)?;
            let flows = sequence::read_flow_dir(flow_dir)?;
            let t = Instant::now();
            let odo = pipeline::estimate_odometry(&flows, &depths, &intr, &cfg.vo)?;
            progress("vo", format_args!("{} pairs in {:.1?}", odo.len(), t.elapsed()));
            odo
        }
    };
    ensure_dir(&a.out)?;
    write_predictions(&a.out.join("motions.txt"), &odometry_predictions(&odo))?;
    write_kitti_poses(&a.out.join("trajectory.txt"), &integrated(&odo))?;
    Ok(())
}

/// Summary of a `slam` run.
#[derive(Debug, Clone)]
pub struct SlamSummary {
    pub vo_ate: Option<f64>,
    pub slam_ate: Option<f64>,
    pub loops: usize,
}

/// ATE without alignment against a ground truth re-based to start at the identity.
fn rebased_ate(gt: &[SE3Pose], est: &Trajectory) -> Result<f64, CliError> {
    let inv = gt[0].inverse();
    let gt = Trajectory::from_poses(gt.iter().map(|p| inv.compose(p)).collect());
    Ok(ate(&gt, est, Alignment::None)?)
}

fn slam(a: &SlamArgs, seed: u64) -> Result<SlamSummary, CliError> {
    let seq = &a.sequence;
    if !seq.is_dir() {
        return Err(IoError::Os {
            path: seq.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "sequence directory not found"),
        }
        .into());
    }
    let cfg = load_or_default(a.config.as_deref())?;
    let intr = resolve_camera(None, &cfg, Some(&seq.join(sequence::CAMERA_FILE)))?;
    let gt_path = seq.join(sequence::POSES_FILE);
    let gt: Option<Vec<SE3Pose>> = if gt_path.is_file() {
        Some(read_kitti_poses(&gt_path)?.poses().to_vec())
    } else {
        None
    };
    let depths = sequence::read_depth_dir(&seq.join(sequence::DEPTH_DIR))?;
    let t = Instant::now();
    let odometry = match &a.odometry {
        Some(p) => predictions_to_odometry(&read_predictions(p)?, p)?,
        None => {
            let flows = sequence::read_flow_dir(&seq.join(sequence::FLOW_DIR))?;
            pipeline::estimate_odometry(&flows, &depths, &intr, &cfg.vo)?
        }
    };
    if odometry.len() + 1 != depths.len() {
        return Err(CliError::Usage(format!(
            "{} consecutive motions for {} frames",
            odometry.len(),
            depths.len()
        )));
    }
    if let Some(g) = &gt {
        if g.len() != depths.len() {
            return Err(CliError::Usage(format!("{}: {} poses for {} frames", gt_path.display(), g.len(), depths.len())));
        }
    }
    progress("slam", format_args!("odometry for {} frames in {:.1?}", depths.len(), t.elapsed()));

    let t_loop = cfg.slam.hyper.t_loop;
    let loops_enabled = t_loop < depths.len();
    let (features, vocab) = if loops_enabled {
        let t = Instant::now();
        let images = sequence::read_image_dir(&seq.join(sequence::IMAGE_DIR))?;
        if images.len() != depths.len() {
            return Err(CliError::Usage(format!("{} images for {} frames", images.len(), depths.len())));
        }
        let features = pipeline::extract_all(&images, &cfg.features)?;
        match pipeline::vocabulary_for(&features, &cfg.reloc, seed) {
            Ok(vocab) => {
                progress("slam", format_args!("features and {} words in {:.1?}", vocab.k(), t.elapsed()));
                (features, Some(vocab))
            }
            Err(e @ (RelocError::VocabularyTooSmall | RelocError::InsufficientDescriptors { .. })) => {
                progress("slam", format_args!("loop detection skipped: {e}"));
                (features, None)
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        (Vec::new(), None)
    };

    let loop_source = match &a.loop_predictions {
        Some(p) => MotionSource::External(read_predictions(p)?.into_iter().map(|x| ((x.i, x.j), x.motion)).collect()),
        None => MotionSource::Geometric(cfg.loop_vo),
    };
    let policy = EstimatorPolicy::new(MotionSource::Geometric(cfg.vo), loop_source, t_loop)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let loop_flows = if loops_enabled {
        sequence::read_loop_flows(&seq.join(sequence::LOOP_FLOW_DIR))?
    } else {
        HashMap::new()
    };
    let inputs = LoopInputs {
        intr: &intr,
        depths: &depths,
        ground_truth: gt.as_deref(),
        loop_flows: &loop_flows,
    };
    let t = Instant::now();
    let out = pipeline::run_slam(&odometry, &features, vocab.as_ref(), &policy, &inputs, &cfg)?;
    for (c, why) in &out.dropped {
        progress("slam", format_args!("dropped loop ({}, {}): {why}", c.i, c.j));
    }
    progress(
        "slam",
        format_args!(
            "{} candidates, {} loop edges, {} iterations, chi2 {:.6e} -> {:.6e} in {:.1?}",
            out.candidates.len(),
            out.loops.len(),
            out.report.iterations,
            out.report.initial_chi2,
            out.report.chi2,
            t.elapsed()
        ),
    );
    if !out.report.converged {
        progress("slam", format_args!("optimizer stopped at the iteration limit; writing the last iterate"));
    }

    ensure_dir(&a.out)?;
    let vo_traj = integrated(&odometry);
    let slam_traj = Trajectory::from_poses(out.report.graph.nodes.clone());
    write_kitti_poses(&a.out.join("vo.txt"), &vo_traj)?;
    write_kitti_poses(&a.out.join("trajectory.txt"), &slam_traj)?;
    write_predictions(&a.out.join("odometry.txt"), &odometry_predictions(&odometry))?;
    write_g2o(&a.out.join("graph.g2o"), &G2oGraph::from_pose_graph(&out.report.graph))?;
    write_candidates(&a.out.join("candidates.txt"), &out.candidates)?;
    if let Some(v) = &vocab {
        write_vocabulary(&a.out.join("vocabulary.bin"), v)?;
    }
    let (vo_ate, slam_ate) = match &gt {
        Some(g) => (Some(rebased_ate(g, &vo_traj)?), Some(rebased_ate(g, &slam_traj)?)),
        None => (None, None),
    };
    let mut m = Manifest::default();
    m.push("seed", seed);
    m.push("frames", depths.len());
    m.push("candidates", out.candidates.len());
    m.push("passed", out.candidates.iter().filter(|c| c.passed).count());
    m.push("loop_edges", out.loops.len());
    m.push("dropped_loops", out.dropped.len());
    m.push("iterations", out.report.iterations);
    m.push("converged", out.report.converged);
    m.push("initial_chi2", out.report.initial_chi2);
    m.push("final_chi2", out.report.chi2);
    if let (Some(v), Some(s)) = (vo_ate, slam_ate) {
        m.push("vo_ate", v);
        m.push("slam_ate", s);
    }
    write_manifest(&a.out.join("report.txt"), &m)?;
    let mut s = String::new();
    for (k, v) in &m.entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    print!("{s}");
    Ok(SlamSummary {
        vo_ate,
        slam_ate,
        loops: out.loops.len(),
    })
}

fn read_trajectory(path: &Path, format: PoseFormat) -> Result<Trajectory, CliError> {
    Ok(match format {
        PoseFormat::Kitti => read_kitti_poses(path)?,
        PoseFormat::Tum => {
            let (t, warnings) = read_tum_trajectory(path)?;
            for w in warnings {
                progress("eval", format_args!("{}: {w}", path.display()));
            }
            t.to_trajectory()
        }
    })
}

/// `key = value` lines of the evaluation report.
pub fn eval_report(gt: &Trajectory, est: &Trajectory, align: Alignment, rpe_delta: usize, kitti: bool) -> Result<String, CliError> {
    if gt.len() != est.len() {
        return Err(MetricsError::LengthMismatch {
            gt: gt.len(),
            est: est.len(),
        }
        .into());
    }
    let mut s = String::new();
    let _ = writeln!(s, "ate = {}", ate(gt, est, align)?);
    let r = rpe(gt, est, rpe_delta)?;
    let _ = writeln!(s, "rpe_trans = {}", r.trans);
    let _ = writeln!(s, "rpe_rot_deg = {}", r.rot_deg);
    if kitti {
        let k = kitti_errors(gt, est)?;
        let _ = writeln!(s, "kitti_t_err = {}", k.t_err);
        let _ = writeln!(s, "kitti_r_err = {}", k.r_err);
    }
    Ok(s)
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let gt = read_trajectory(&a.gt, a.format)?;
    let est = read_trajectory(&a.est, a.format)?;
    let align = match a.align {
        AlignArg::None => Alignment::None,
        AlignArg::Rigid => Alignment::Rigid,
    };
    print!("{}", eval_report(&gt, &est, align, a.rpe_delta, a.kitti)?);
    Ok(())
}

fn simulate(a: &SimulateArgs, seed: u64) -> Result<(), CliError> {
    let cfg = load_or_default(a.spec.as_deref())?;
    let intr = cfg.camera.unwrap_or_else(sequence::sim_camera);
    let t = Instant::now();
    let seq = sequence::simulate_sequence(&cfg.sim, seed, &intr).map_err(SequenceError::from)?;
    progress("simulate", format_args!("rendered {} frames in {:.1?}", seq.poses.len(), t.elapsed()));
    let mut m = Manifest::default();
    m.push("command", "simulate");
    m.push("seed", seed);
    m.push("preset", format!("{:?}", cfg.sim.preset).to_lowercase());
    m.push("laps", cfg.sim.laps);
    m.push("sigma_t", cfg.sim.sigma_t);
    m.push("sigma_rot", cfg.sim.sigma_rot);
    let seq_dir = a.out.join("sequence");
    ensure_dir(&seq_dir)?;
    sequence::write_sequence(&seq_dir, &seq, &intr, m)?;
    if a.no_slam {
        return Ok(());
    }
    let odometry = seq_dir.join(sequence::ODOMETRY_FILE);
    let summary = slam(
        &SlamArgs {
            sequence: seq_dir,
            config: a.spec.clone(),
            odometry: Some(odometry),
            loop_predictions: None,
            out: a.out.join("slam"),
        },
        seed,
    )?;
    progress("simulate", format_args!("{} loop edges, done in {:.1?}", summary.loops, t.elapsed()));
    Ok(())
}
