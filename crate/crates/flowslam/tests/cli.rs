use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use flowslam::io::{
    format_g2o, read_g2o, read_kitti_poses, read_manifest, read_motion_records, write_kitti_poses, write_predictions,
    Prediction,
};
use flowslam_core::metrics::{ate, rpe, Alignment};
use flowslam_core::motionmodel::{MotionModel, StudentT};
use flowslam_core::{Motion6DoF, SE3Pose, Trajectory};
use rand::SeedableRng;

const SMALL_SPEC: &str = "\
[camera]
fx = 100
fy = 100
cx = 79.5
cy = 59.5
width = 160
height = 120

[sim]
poses_per_segment = 6
";

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn flowslam(args: &[&str]) -> Out {
    let o = Command::new(env!("CARGO_BIN_EXE_flowslam")).args(args).output().unwrap();
    Out {
        code: o.status.code().unwrap(),
        stdout: String::from_utf8(o.stdout).unwrap(),
        stderr: String::from_utf8(o.stderr).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the small spec and simulates a sequence into `dir/sim`.
fn small_sequence(dir: &Path, seed: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let spec = dir.join("spec.ini");
    std::fs::write(&spec, SMALL_SPEC).unwrap();
    let out = dir.join("sim");
    let r = flowslam(&["--seed", seed, "simulate", s(&spec), "--out", s(&out), "--no-slam"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    out.join("sequence")
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn report_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing from:\n{text}"))
        .parse()
        .unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(flowslam(&["--help"]).code, 0);
    assert_eq!(flowslam(&["slam", "--help"]).code, 0);
    assert_eq!(flowslam(&["--no-such-flag"]).code, 2);
    assert_eq!(flowslam(&["eval", "--gt", "a.txt"]).code, 2);
    assert_eq!(flowslam(&["--threads", "0", "eval"]).code, 2);
}

#[test]
fn simulate_is_reproducible_and_rejects_bad_specs() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_sequence(&dir.path().join("a"), "3");
    let b = small_sequence(&dir.path().join("b"), "3");
    let ta = tree(&a);
    assert!(ta.contains_key(Path::new("depth/000059.png")));
    assert!(ta.contains_key(Path::new("flow/000059.flo")));
    assert_eq!(ta, tree(&b));
    let c = small_sequence(&dir.path().join("c"), "4");
    assert_ne!(ta, tree(&c));

    let bad = dir.path().join("bad.ini");
    std::fs::write(&bad, "[sim]\nlaps = two\n").unwrap();
    let r = flowslam(&["simulate", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("laps"), "{}", r.stderr);
}

#[test]
fn vo_on_noiseless_flow_recovers_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let seq = small_sequence(dir.path(), "1");
    let out = dir.path().join("vo");
    let r = flowslam(&[
        "vo",
        "--flow-dir",
        s(&seq.join("flow")),
        "--depth-dir",
        s(&seq.join("depth")),
        "--camera",
        s(&seq.join("camera.ini")),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let gt = read_kitti_poses(&seq.join("poses.txt")).unwrap();
    let est = read_kitti_poses(&out.join("trajectory.txt")).unwrap();
    let ate = ate(&gt, &est, Alignment::Rigid).unwrap();
    assert!(ate < 1e-5, "ate {ate}");

    let r = flowslam(&[
        "vo",
        "--flow-dir",
        s(&seq.join("flow")),
        "--depth-dir",
        s(&seq.join("depth")),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("intrinsics"), "{}", r.stderr);
}

#[test]
fn vo_consumes_external_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let m = Motion6DoF::new(0.0, 0.0, 1.0, 0.0, 0.1, 0.0);
    let preds: Vec<Prediction> = (0..4).map(|k| Prediction { i: k, j: k + 1, motion: m }).collect();
    let p = dir.path().join("pred.txt");
    write_predictions(&p, &preds).unwrap();
    let out = dir.path().join("vo");
    let r = flowslam(&["vo", "--predictions", s(&p), "--out", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let traj = read_kitti_poses(&out.join("trajectory.txt")).unwrap();
    let mut want = SE3Pose::identity();
    for k in 0..4 {
        want = want.compose(&m.to_se3());
        assert_eq!(traj.poses()[k + 1], want);
    }

    let gap = vec![Prediction { i: 0, j: 2, motion: m }];
    write_predictions(&p, &gap).unwrap();
    assert_eq!(flowslam(&["vo", "--predictions", s(&p), "--out", s(&out)]).code, 2);
}

#[test]
fn slam_without_loops_equals_vo_and_dumps_a_reloadable_graph() {
    let dir = tempfile::tempdir().unwrap();
    let seq = small_sequence(dir.path(), "2");
    let cfg = dir.path().join("noloop.ini");
    std::fs::write(&cfg, "T_loop = inf\n").unwrap();
    let out = dir.path().join("slam");
    let r = flowslam(&[
        "slam",
        s(&seq),
        "--config",
        s(&cfg),
        "--odometry",
        s(&seq.join("odometry.txt")),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(std::fs::read(out.join("vo.txt")).unwrap(), std::fs::read(out.join("trajectory.txt")).unwrap());
    assert!(report_value(&r.stdout, "loop_edges") == 0.0);

    let text = std::fs::read_to_string(out.join("graph.g2o")).unwrap();
    let g = read_g2o(&out.join("graph.g2o")).unwrap();
    assert_eq!(format_g2o(&g), text);
    let pg = g.to_pose_graph().unwrap();
    let traj = read_kitti_poses(&out.join("trajectory.txt")).unwrap();
    for (a, b) in pg.nodes.iter().zip(traj.poses()) {
        assert!(a.max_abs_diff(b) < 1e-12);
    }
}

#[test]
fn slam_reports_missing_sequence_as_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let r = flowslam(&["slam", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("nowhere"), "{}", r.stderr);
}

#[test]
fn eval_is_a_thin_wrapper() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(9);
    let poses: Vec<SE3Pose> = (0..30)
        .map(|k| {
            use rand::Rng;
            Motion6DoF::new(k as f64, rng.random_range(-0.1..0.1), 0.0, 0.0, rng.random_range(-0.1..0.1), 0.0).to_se3()
        })
        .collect();
    let gt = Trajectory::from_poses(poses.clone());
    let est = Trajectory::from_poses(poses.iter().map(|p| p.compose(&Motion6DoF::new(0.01, 0.0, 0.0, 0.0, 0.0, 0.002).to_se3())).collect());
    let (g, e) = (dir.path().join("gt.txt"), dir.path().join("est.txt"));
    write_kitti_poses(&g, &gt).unwrap();
    write_kitti_poses(&e, &est).unwrap();

    let same = flowslam(&["eval", "--gt", s(&g), "--est", s(&g)]);
    assert_eq!(same.code, 0, "{}", same.stderr);
    for key in ["ate", "rpe_trans", "rpe_rot_deg"] {
        assert_eq!(report_value(&same.stdout, key), 0.0, "{key}");
    }

    let r = flowslam(&["eval", "--gt", s(&g), "--est", s(&e), "--align", "none", "--rpe-delta", "3"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rp = rpe(&gt, &est, 3).unwrap();
    assert_eq!(report_value(&r.stdout, "ate"), ate(&gt, &est, Alignment::None).unwrap());
    assert_eq!(report_value(&r.stdout, "rpe_trans"), rp.trans);
    assert_eq!(report_value(&r.stdout, "rpe_rot_deg"), rp.rot_deg);

    write_kitti_poses(&e, &Trajectory::from_poses(poses[..20].to_vec())).unwrap();
    assert_eq!(flowslam(&["eval", "--gt", s(&g), "--est", s(&e)]).code, 2);
}

#[test]
fn fit_motion_from_poses_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let seq = small_sequence(dir.path(), "5");
    let model = dir.path().join("model.txt");
    let r = flowslam(&["fit-motion", "--poses", s(&seq.join("poses.txt")), "--out", s(&model)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let fitted = MotionModel::from_record(&std::fs::read_to_string(&model).unwrap()).unwrap();
    for m in &fitted.marginals {
        assert!(m.nu.is_finite() && m.loc.is_finite() && m.scale.is_finite());
    }

    let few = dir.path().join("few.txt");
    let short = read_kitti_poses(&seq.join("poses.txt")).unwrap().poses()[..20].to_vec();
    write_kitti_poses(&few, &Trajectory::from_poses(short)).unwrap();
    let r = flowslam(&["fit-motion", "--poses", s(&few), "--out", s(&model)]);
    assert_eq!(r.code, 2);

    let truth = StudentT::new(4.0, 0.5, 0.05).unwrap();
    let gen = MotionModel::new([truth; 6]);
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    let preds: Vec<Prediction> = (0..20_000)
        .map(|k| Prediction { i: k, j: k + 1, motion: gen.sample(&mut rng) })
        .collect();
    let p = dir.path().join("pred.txt");
    write_predictions(&p, &preds).unwrap();
    let r = flowslam(&["fit-motion", "--predictions", s(&p), "--out", s(&model)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let fitted = MotionModel::from_record(&std::fs::read_to_string(&model).unwrap()).unwrap();
    for m in &fitted.marginals {
        assert!((m.nu - 4.0).abs() < 0.4, "nu {}", m.nu);
        assert!((m.loc - 0.5).abs() < 0.05, "loc {}", m.loc);
        assert!((m.scale - 0.05).abs() < 0.005, "scale {}", m.scale);
    }
}

#[test]
fn synth_writes_samples_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let seq = small_sequence(dir.path(), "6");
    let model = dir.path().join("model.txt");
    assert_eq!(flowslam(&["fit-motion", "--poses", s(&seq.join("poses.txt")), "--out", s(&model)]).code, 0);

    let run = |out: &Path, count: &str| {
        flowslam(&[
            "--seed",
            "8",
            "synth",
            "--depth-dir",
            s(&seq.join("depth")),
            "--model",
            s(&model),
            "--count",
            count,
            "--out",
            s(out),
        ])
    };
    let empty = dir.path().join("empty");
    let r = run(&empty, "0");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(read_manifest(&empty.join("manifest.txt")).unwrap().get("count"), Some("0"));
    assert!(read_motion_records(&empty.join("motions.txt")).unwrap().is_empty());

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&a, "7").code, 0);
    assert_eq!(run(&b, "7").code, 0);
    let ta = tree(&a);
    assert!(ta.contains_key(Path::new("flow/000006.flo")));
    assert_eq!(ta, tree(&b));
    assert_eq!(read_motion_records(&a.join("motions.txt")).unwrap().len(), 7);

    let bogus = dir.path().join("no_depth_here");
    let r = flowslam(&[
        "synth",
        "--depth-dir",
        s(&bogus),
        "--camera",
        s(&seq.join("camera.ini")),
        "--model",
        s(&model),
        "--count",
        "3",
        "--out",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("no_depth_here"), "{}", r.stderr);
}
