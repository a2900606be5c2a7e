//! Sequence directories.
//!
//! ```text
//! camera.ini          [camera] section with the pinhole intrinsics
//! poses.txt           ground-truth camera-to-world poses, KITTI format (optional)
//! odometry.txt        relative-motion predictions for consecutive pairs (optional)
//! manifest.txt        provenance: seeds and generator parameters
//! depth/NNNNNN.png    16-bit depth of frame N, 1/256 m per unit
//! image/NNNNNN.png    8-bit grayscale image of frame N
//! flow/NNNNNN.flo     flow of pair (N-1, N) on frame N's grid, N >= 1
//! loopflow/IIIIII_JJJJJJ.flo  flow of loop pair (I, J) on frame J's grid (optional)
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use flowslam_core::reloc::GrayImage;
use flowslam_core::sim::{corrupt_odometry, pair_flow, Scene, SimError, TrajectorySpec};
use flowslam_core::{DepthMap, FlowField, Intrinsics, SE3Pose, Trajectory};
use rayon::prelude::*;

use crate::io::{
    self, camera_section, os_error, quantize_depth, read_depth_png16, read_flo, read_gray_png, write_depth_png16,
    write_file, write_flo, write_gray_png, write_kitti_poses, write_manifest, write_predictions, IoError, Manifest,
    Prediction, SimConfig, SimPreset, DEPTH_SCALE,
};

pub const CAMERA_FILE: &str = "camera.ini";
pub const POSES_FILE: &str = "poses.txt";
pub const ODOMETRY_FILE: &str = "odometry.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const DEPTH_DIR: &str = "depth";
pub const IMAGE_DIR: &str = "image";
pub const FLOW_DIR: &str = "flow";
pub const LOOP_FLOW_DIR: &str = "loopflow";

pub fn frame_name(k: usize, ext: &str) -> String {
    format!("{k:06}.{ext}")
}

/// Intrinsics of the simulated camera: 320 by 240 pixels, 200 px focal length.
pub fn sim_camera() -> Intrinsics {
    Intrinsics::new(200.0, 200.0, 159.5, 119.5, 320, 240).expect("valid intrinsics")
}

/// Trajectory for a `[sim]` configuration. Extra laps repeat the waypoint
/// loop and split the same number of poses over it.
pub fn sim_spec(cfg: &SimConfig, seed: u64) -> TrajectorySpec {
    let mut spec = match cfg.preset {
        SimPreset::Rectangle => TrajectorySpec::rectangle_loop(seed),
        SimPreset::Straight => TrajectorySpec::straight_sweep(seed),
    };
    if cfg.preset == SimPreset::Rectangle && cfg.laps > 1 {
        let lap = spec.waypoints.clone();
        for _ in 1..cfg.laps {
            spec.waypoints.extend_from_slice(&lap[1..]);
        }
        spec.poses_per_segment = (spec.poses_per_segment / cfg.laps).max(1);
    }
    if let Some(n) = cfg.poses_per_segment {
        spec.poses_per_segment = n;
    }
    let (st, sr) = (cfg.sigma_t, cfg.sigma_rot);
    spec.odometry_sigmas = [st, st, st, sr, sr, sr];
    spec
}

/// A rendered sequence as it reads back from disk.
#[derive(Debug, Clone)]
pub struct SimSequence {
    pub poses: Vec<SE3Pose>,
    /// Quantized to the depth raster resolution.
    pub depths: Vec<DepthMap>,
    pub images: Vec<GrayImage>,
    /// Flow of pair `(k, k + 1)` at index `k`, computed on the quantized depth.
    pub flows: Vec<FlowField>,
    /// Ground-truth relative motions with per-step Gaussian noise.
    pub odometry: Vec<Prediction>,
}

#[derive(Debug, thiserror::Error)]
pub enum SequenceError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Renders the configured trajectory. Depth is quantized before the flows are
/// derived from it, so the flows are exact for the depth stored on disk.
pub fn simulate_sequence(cfg: &SimConfig, seed: u64, intr: &Intrinsics) -> Result<SimSequence, SimError> {
    let spec = sim_spec(cfg, seed);
    let scene = Scene::generate(&spec, seed);
    let poses = spec.poses()?;
    let (depths, images): (Vec<DepthMap>, Vec<GrayImage>) = poses
        .par_iter()
        .map(|p| {
            let (d, im) = flowslam_core::sim::render_frame(&scene, p, intr);
            (quantize_depth(&d, DEPTH_SCALE), im)
        })
        .unzip();
    let flows = if cfg.write_flows {
        (1..poses.len())
            .into_par_iter()
            .map(|k| pair_flow(&depths[k], &poses[k - 1], &poses[k], intr))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let rel: Vec<SE3Pose> = poses.windows(2).map(|p| p[0].between(&p[1])).collect();
    let odometry = corrupt_odometry(&rel, &spec.odometry_sigmas, seed)
        .into_iter()
        .enumerate()
        .map(|(k, motion)| Prediction { i: k, j: k + 1, motion })
        .collect();
    Ok(SimSequence {
        poses,
        depths,
        images,
        flows,
        odometry,
    })
}

fn ensure_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(os_error(path))
}

/// Writes `seq` in the sequence layout, adding geometry and file counts to `manifest`.
pub fn write_sequence(dir: &Path, seq: &SimSequence, intr: &Intrinsics, mut manifest: Manifest) -> Result<(), IoError> {
    for sub in [DEPTH_DIR, IMAGE_DIR] {
        ensure_dir(&dir.join(sub))?;
    }
    write_file(&dir.join(CAMERA_FILE), camera_section(intr).as_bytes())?;
    write_kitti_poses(&dir.join(POSES_FILE), &Trajectory::from_poses(seq.poses.clone()))?;
    write_predictions(&dir.join(ODOMETRY_FILE), &seq.odometry)?;
    seq.depths
        .par_iter()
        .zip(&seq.images)
        .enumerate()
        .try_for_each(|(k, (d, im))| {
            write_depth_png16(&dir.join(DEPTH_DIR).join(frame_name(k, "png")), d, DEPTH_SCALE)?;
            write_gray_png(&dir.join(IMAGE_DIR).join(frame_name(k, "png")), im)
        })?;
    if !seq.flows.is_empty() {
        ensure_dir(&dir.join(FLOW_DIR))?;
        seq.flows
            .par_iter()
            .enumerate()
            .try_for_each(|(k, f)| write_flo(&dir.join(FLOW_DIR).join(frame_name(k + 1, "flo")), f))?;
    }
    manifest.push("frames", seq.poses.len());
    manifest.push("flows", seq.flows.len());
    manifest.push("depth_scale", DEPTH_SCALE);
    write_manifest(&dir.join(MANIFEST_FILE), &manifest)
}

/// Files `first.ext`, `first+1.ext`, ... in `dir`, which must hold no other
/// files with that extension.
pub fn indexed_files(dir: &Path, ext: &str, first: usize) -> Result<Vec<PathBuf>, IoError> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(os_error(dir))?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()
        .map_err(os_error(dir))?;
    names.retain(|n| Path::new(n).extension().is_some_and(|e| e == ext));
    names.sort();
    for (k, n) in names.iter().enumerate() {
        let want = frame_name(first + k, ext);
        if *n != want {
            return Err(IoError::Format {
                path: dir.to_path_buf(),
                message: format!("expected {want}, found {n}; files must be numbered consecutively from {first}"),
            });
        }
    }
    Ok(names.into_iter().map(|n| dir.join(n)).collect())
}

pub fn read_depth_dir(dir: &Path) -> Result<Vec<DepthMap>, IoError> {
    let files = indexed_files(dir, "png", 0)?;
    if files.is_empty() {
        return Err(IoError::Format {
            path: dir.to_path_buf(),
            message: "no depth rasters".into(),
        });
    }
    files.par_iter().map(|p| read_depth_png16(p, DEPTH_SCALE)).collect()
}

pub fn read_image_dir(dir: &Path) -> Result<Vec<GrayImage>, IoError> {
    indexed_files(dir, "png", 0)?.par_iter().map(|p| read_gray_png(p)).collect()
}

/// Flows of pairs `(0, 1), (1, 2), ...`, stored from `000001.flo` on.
pub fn read_flow_dir(dir: &Path) -> Result<Vec<FlowField>, IoError> {
    indexed_files(dir, "flo", 1)?.par_iter().map(|p| read_flo(p)).collect()
}

/// Loop-pair flows named `IIIIII_JJJJJJ.flo`; a missing directory is empty.
pub fn read_loop_flows(dir: &Path) -> Result<HashMap<(usize, usize), FlowField>, IoError> {
    if !dir.is_dir() {
        return Ok(HashMap::new());
    }
    let mut entries = Vec::new();
    for e in fs::read_dir(dir).map_err(os_error(dir))? {
        let path = e.map_err(os_error(dir))?.path();
        if path.extension().is_none_or(|x| x != "flo") {
            continue;
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let pair = stem
            .split_once('_')
            .and_then(|(i, j)| Some((i.parse::<usize>().ok()?, j.parse::<usize>().ok()?)));
        match pair {
            Some(p) => entries.push((p, path)),
            None => {
                return Err(IoError::Format {
                    path,
                    message: "loop flow files are named IIIIII_JJJJJJ.flo".into(),
                })
            }
        }
    }
    entries
        .into_par_iter()
        .map(|(p, path)| Ok((p, read_flo(&path)?)))
        .collect()
}

pub fn loop_flow_name(i: usize, j: usize) -> String {
    format!("{i:06}_{j:06}.flo")
}

/// Parses the `[camera]` section of `path`.
pub fn read_camera(path: &Path) -> Result<Option<Intrinsics>, io::ConfigError> {
    Ok(io::load_config(path)?.camera)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laps_keep_the_pose_count() {
        let one = sim_spec(&SimConfig::default(), 1);
        let two = sim_spec(&SimConfig { laps: 2, ..Default::default() }, 1);
        assert_eq!(one.pose_count(), 500);
        assert_eq!(two.pose_count(), 500);
        assert!((two.path_length() - 2.0 * one.path_length()).abs() < 1e-9);
    }

    #[test]
    fn indexed_files_reject_gaps() {
        let dir = tempfile::tempdir().unwrap();
        for k in [0, 1, 3] {
            fs::write(dir.path().join(frame_name(k, "png")), b"").unwrap();
        }
        let err = indexed_files(dir.path(), "png", 0).unwrap_err();
        assert!(err.to_string().contains("000002.png"), "{err}");
    }
}
