//! Middlebury `.flo`: magic `202021.25` (f32), width and height (i32), then
//! interleaved `(u, v)` f32 pairs in row-major order.

use std::path::Path;

use flowslam_core::FlowField;

use super::{read_bytes, write_file, IoError, ParseFailure};

pub const FLO_MAGIC: f32 = 202021.25;
/// Written for invalid pixels.
pub const FLO_UNKNOWN: f32 = 1e10;
/// Components above this magnitude read as invalid.
pub const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;

const HEADER: usize = 12;

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * flow.len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for k in 0..flow.len() {
        let (u, v) = if flow.valid[k] {
            (flow.u[k] as f32, flow.v[k] as f32)
        } else {
            (FLO_UNKNOWN, FLO_UNKNOWN)
        };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn f32_at(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn is_unknown(x: f32) -> bool {
    x.is_nan() || x.abs() > FLO_UNKNOWN_THRESHOLD
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField, ParseFailure> {
    if bytes.len() < HEADER {
        return Err(ParseFailure::Binary(bytes.len(), "truncated header".into()));
    }
    let magic = f32_at(bytes, 0);
    if magic != FLO_MAGIC {
        return Err(ParseFailure::Binary(0, format!("bad magic {magic}")));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let h = i32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if w <= 0 || h <= 0 {
        return Err(ParseFailure::Binary(4, format!("bad size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let n = w
        .checked_mul(h)
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| ParseFailure::Binary(4, format!("size {w}x{h} overflows")))?;
    let need = HEADER + 8 * n;
    if bytes.len() < need {
        return Err(ParseFailure::Binary(bytes.len(), format!("truncated payload, expected {need} bytes")));
    }
    if bytes.len() > need {
        return Err(ParseFailure::Binary(need, "trailing bytes".into()));
    }
    let mut flow = FlowField::invalid(w, h);
    for k in 0..n {
        let (u, v) = (f32_at(bytes, HEADER + 8 * k), f32_at(bytes, HEADER + 8 * k + 4));
        if !is_unknown(u) && !is_unknown(v) {
            flow.u[k] = u as f64;
            flow.v[k] = v as f64;
            flow.valid[k] = true;
        }
    }
    Ok(flow)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<(), IoError> {
    write_file(path, &encode_flo(flow))
}

pub fn read_flo(path: &Path) -> Result<FlowField, IoError> {
    decode_flo(&read_bytes(path)?).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_file_is_twenty_bytes() {
        let mut f = FlowField::zeros(1, 1);
        f.set(0, 0, Some((3.5, -2.25)));
        let bytes = encode_flo(&f);
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[12..16], &3.5f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &(-2.25f32).to_le_bytes());
        assert_eq!(decode_flo(&bytes).unwrap(), f);
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let mut bytes = encode_flo(&FlowField::zeros(2, 2));
        assert!(decode_flo(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] ^= 1;
        assert!(matches!(decode_flo(&bytes), Err(ParseFailure::Binary(0, _))));
    }

    #[test]
    fn huge_values_read_as_invalid() {
        let mut f = FlowField::zeros(2, 1);
        f.set(1, 0, None);
        let mut bytes = encode_flo(&f);
        bytes[12..16].copy_from_slice(&2e9f32.to_le_bytes());
        let back = decode_flo(&bytes).unwrap();
        assert_eq!(back.valid_count(), 0);
    }
}
