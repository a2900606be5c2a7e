//! File formats.
//!
//! Text writers print every float in its shortest round-trip form, so a text
//! reader/writer pair reproduces values exactly. Binary formats are
//! little-endian unless the container (PNG) says otherwise.

mod config;
mod depth;
mod flo;
mod g2o;
mod kitti;
mod records;
mod tum;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{
    camera_section, load_config, parse_config, ConfigError, RelocConfig, RunConfig, SimConfig, SimPreset, SlamConfig,
};
pub use depth::{
    decode_png16, encode_png16, quantize_depth, read_depth_png16, read_gray_png, write_depth_png16, write_gray_png, DEPTH_SCALE,
};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC, FLO_UNKNOWN, FLO_UNKNOWN_THRESHOLD};
pub use g2o::{format_g2o, parse_g2o, read_g2o, write_g2o, G2oEdge, G2oGraph, G2oVertex};
pub use kitti::{format_kitti_poses, parse_kitti_poses, read_kitti_poses, write_kitti_poses};
pub use records::{
    decode_vocabulary, encode_vocabulary, read_candidates, read_manifest, read_motion_records, read_predictions,
    read_vocabulary, write_candidates, write_manifest, write_motion_records, write_predictions, write_vocabulary,
    Manifest, MotionRecord, Prediction, VOCAB_MAGIC,
};
pub use tum::{format_tum, parse_tum, read_tum_trajectory, write_tum_trajectory, TumRecord, TumTrajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Os {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Line { path: PathBuf, line: usize, message: String },
    #[error("{}: byte {offset}: {message}", path.display())]
    Binary { path: PathBuf, offset: usize, message: String },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

/// A parse failure before the file name is attached.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseFailure {
    Line(usize, String),
    Binary(usize, String),
    Format(String),
}

impl ParseFailure {
    pub fn at(self, path: &Path) -> IoError {
        let path = path.to_path_buf();
        match self {
            ParseFailure::Line(line, message) => IoError::Line { path, line, message },
            ParseFailure::Binary(offset, message) => IoError::Binary { path, offset, message },
            ParseFailure::Format(message) => IoError::Format { path, message },
        }
    }
}

pub(crate) fn os_error(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Os {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(os_error(path))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(os_error(path))
}

pub(crate) fn write_file(path: &Path, data: &[u8]) -> Result<(), IoError> {
    fs::write(path, data).map_err(os_error(path))
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Non-empty, non-comment lines with their 1-based numbers.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn parse_fields<const N: usize>(line_no: usize, line: &str, what: &str) -> Result<[f64; N], ParseFailure> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != N {
        return Err(ParseFailure::Line(
            line_no,
            format!("{what} needs {N} fields, found {}", parts.len()),
        ));
    }
    let mut out = [0.0; N];
    for (k, p) in parts.iter().enumerate() {
        out[k] = parse_float(line_no, k + 1, p)?;
    }
    Ok(out)
}

pub(crate) fn parse_float(line_no: usize, field: usize, s: &str) -> Result<f64, ParseFailure> {
    let v: f64 = s
        .parse()
        .map_err(|_| ParseFailure::Line(line_no, format!("field {field}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(ParseFailure::Line(line_no, format!("field {field}: `{s}` is not finite")));
    }
    Ok(v)
}

pub(crate) fn parse_index(line_no: usize, field: usize, s: &str) -> Result<usize, ParseFailure> {
    s.parse()
        .map_err(|_| ParseFailure::Line(line_no, format!("field {field}: `{s}` is not a frame index")))
}
