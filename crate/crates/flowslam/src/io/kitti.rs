//! KITTI odometry poses: one row-major 3x4 `[R | t]` per line, row `k` is frame `k`.

use std::fmt::Write as _;
use std::path::Path;

use flowslam_core::{SE3Pose, Trajectory};

use super::{data_lines, fmt_f64, parse_fields, read_text, write_file, IoError, ParseFailure};

pub fn format_kitti_poses(poses: &[SE3Pose]) -> String {
    let mut s = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major_3x4().iter().map(|v| fmt_f64(*v)).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn parse_kitti_poses(text: &str) -> Result<Vec<SE3Pose>, ParseFailure> {
    data_lines(text)
        .map(|(n, line)| parse_fields::<12>(n, line, "pose line").map(|v| SE3Pose::from_row_major_3x4(&v)))
        .collect()
}

pub fn write_kitti_poses(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    write_file(path, format_kitti_poses(traj.poses()).as_bytes())
}

pub fn read_kitti_poses(path: &Path) -> Result<Trajectory, IoError> {
    let poses = parse_kitti_poses(&read_text(path)?).map_err(|e| e.at(path))?;
    Ok(Trajectory::from_poses(poses))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_line() {
        let p = parse_kitti_poses("1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        assert_eq!(p, vec![SE3Pose::identity()]);
    }

    #[test]
    fn short_line_names_its_number() {
        let err = parse_kitti_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, ParseFailure::Line(2, ref m) if m.contains("found 11")));
    }

    #[test]
    fn non_numeric_field() {
        assert!(parse_kitti_poses("1 0 0 x 0 1 0 0 0 0 1 0").is_err());
    }
}
