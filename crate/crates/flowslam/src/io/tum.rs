//! TUM trajectories: `time tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::path::Path;

use flowslam_core::geom::UnitQuat;
use flowslam_core::{SE3Pose, Trajectory};
use nalgebra::Vector3;

use super::{data_lines, fmt_f64, parse_fields, read_text, write_file, IoError, ParseFailure};

/// Quaternions further than this from unit norm are reported when read.
pub const QUAT_WARN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TumRecord {
    pub time: f64,
    pub translation: [f64; 3],
    pub rotation: UnitQuat,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TumTrajectory {
    pub records: Vec<TumRecord>,
}

impl TumTrajectory {
    /// Uses the trajectory's timestamps, or frame ids as seconds when it has none.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let times: Vec<f64> = match traj.timestamps() {
            Some(t) => t.to_vec(),
            None => traj.ids().iter().map(|&i| i as f64).collect(),
        };
        let records = traj
            .poses()
            .iter()
            .zip(times)
            .map(|(p, time)| TumRecord {
                time,
                translation: [p.translation.x, p.translation.y, p.translation.z],
                rotation: p.quaternion(),
            })
            .collect();
        TumTrajectory { records }
    }

    /// Frame ids are the record indices.
    pub fn to_trajectory(&self) -> Trajectory {
        let poses = self
            .records
            .iter()
            .map(|r| SE3Pose::from_quat_translation(&r.rotation, Vector3::from(r.translation)))
            .collect();
        let stamps = self.records.iter().map(|r| r.time).collect();
        Trajectory::from_poses(poses)
            .with_timestamps(stamps)
            .expect("timestamps validated on construction")
    }
}

pub fn format_tum(t: &TumTrajectory) -> String {
    let mut s = String::new();
    for r in &t.records {
        let q = r.rotation;
        let vals = [
            r.time,
            r.translation[0],
            r.translation[1],
            r.translation[2],
            q.x,
            q.y,
            q.z,
            q.w,
        ];
        let row: Vec<String> = vals.iter().map(|v| fmt_f64(*v)).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

/// Parses records. Quaternions off unit norm are normalized; those off by
/// more than [`QUAT_WARN_TOLERANCE`] also produce a warning.
pub fn parse_tum(text: &str) -> Result<(TumTrajectory, Vec<String>), ParseFailure> {
    let mut records: Vec<TumRecord> = Vec::new();
    let mut warnings = Vec::new();
    for (n, line) in data_lines(text) {
        let v = parse_fields::<8>(n, line, "trajectory line")?;
        if let Some(prev) = records.last() {
            if v[0] <= prev.time || v[0].is_nan() {
                return Err(ParseFailure::Line(n, format!("timestamp {} does not increase", v[0])));
            }
        }
        let (x, y, z, w) = (v[4], v[5], v[6], v[7]);
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        let rotation = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuat::from_components_unchecked(w, x, y, z)
        } else {
            if (norm - 1.0).abs() > QUAT_WARN_TOLERANCE {
                warnings.push(format!("line {n}: quaternion norm {norm} normalized"));
            }
            let q = UnitQuat::new_normalize(w, x, y, z)
                .ok_or_else(|| ParseFailure::Line(n, "zero quaternion".into()))?;
            // Keep the file's sign; normalization canonicalizes it.
            if q.dot(&UnitQuat::from_components_unchecked(w, x, y, z)) < 0.0 {
                q.negated()
            } else {
                q
            }
        };
        records.push(TumRecord {
            time: v[0],
            translation: [v[1], v[2], v[3]],
            rotation,
        });
    }
    Ok((TumTrajectory { records }, warnings))
}

pub fn write_tum_trajectory(path: &Path, t: &TumTrajectory) -> Result<(), IoError> {
    write_file(path, format_tum(t).as_bytes())
}

pub fn read_tum_trajectory(path: &Path) -> Result<(TumTrajectory, Vec<String>), IoError> {
    parse_tum(&read_text(path)?).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_at_time_zero() {
        let traj = Trajectory::from_poses(vec![SE3Pose::identity()]);
        let s = format_tum(&TumTrajectory::from_trajectory(&traj));
        assert_eq!(s, "0 0 0 0 0 0 0 1\n");
        let (back, warnings) = parse_tum("0 0 0 0 0 0 0 1").unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back.to_trajectory().poses()[0], SE3Pose::identity());
    }

    #[test]
    fn unsorted_timestamps_are_rejected() {
        let err = parse_tum("1 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, ParseFailure::Line(2, _)));
    }

    #[test]
    fn off_norm_quaternion_is_normalized_with_warning() {
        let (t, w) = parse_tum("0 0 0 0 0 0 0 2").unwrap();
        assert_eq!(t.records[0].rotation, UnitQuat::IDENTITY);
        assert_eq!(w.len(), 1);
    }
}
