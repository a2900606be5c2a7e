//! Single-channel PNG rasters: 16-bit depth (KITTI convention) and 8-bit images.

use std::path::Path;

use flowslam_core::reloc::GrayImage;
use flowslam_core::DepthMap;
use png::{BitDepth, ColorType};

use super::{read_bytes, write_file, IoError, ParseFailure};

/// Raw units per meter.
pub const DEPTH_SCALE: f64 = 256.0;

fn encode(width: usize, height: usize, depth: BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(ColorType::Grayscale);
        enc.set_depth(depth);
        let mut w = enc.write_header().expect("writing to memory");
        w.write_image_data(data).expect("buffer matches header");
    }
    out
}

fn decode(bytes: &[u8], want: BitDepth) -> Result<(usize, usize, Vec<u8>), ParseFailure> {
    let bad = |e: png::DecodingError| ParseFailure::Format(format!("png: {e}"));
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(bad)?;
    let (color, depth) = reader.output_color_type();
    if color != ColorType::Grayscale || depth != want {
        return Err(ParseFailure::Format(format!(
            "expected single-channel {}-bit raster, found {color:?} at {} bits",
            want as u8,
            depth as u8
        )));
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

pub fn encode_png16(width: usize, height: usize, raw: &[u16]) -> Vec<u8> {
    assert_eq!(raw.len(), width * height, "raster size");
    let data: Vec<u8> = raw.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode(width, height, BitDepth::Sixteen, &data)
}

pub fn decode_png16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), ParseFailure> {
    let (w, h, buf) = decode(bytes, BitDepth::Sixteen)?;
    Ok((w, h, buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}

fn to_raw(z: f64, scale: f64) -> u16 {
    if z.is_nan() {
        0
    } else {
        (z * scale).round().clamp(1.0, u16::MAX as f64) as u16
    }
}

fn from_raw(r: u16, scale: f64) -> f64 {
    if r == 0 {
        f64::NAN
    } else {
        r as f64 / scale
    }
}

/// The depth map a write/read cycle at `scale` would return.
pub fn quantize_depth(depth: &DepthMap, scale: f64) -> DepthMap {
    let values = depth.values().iter().map(|&z| from_raw(to_raw(z, scale), scale)).collect();
    DepthMap::new(depth.width(), depth.height(), values).expect("quantized depth is positive or invalid")
}

/// Writes `round(z * scale)`, clamped to the 16-bit range; invalid pixels are 0.
pub fn write_depth_png16(path: &Path, depth: &DepthMap, scale: f64) -> Result<(), IoError> {
    let raw: Vec<u16> = depth.values().iter().map(|&z| to_raw(z, scale)).collect();
    write_file(path, &encode_png16(depth.width(), depth.height(), &raw))
}

/// Depth in meters is `raw / scale`; raw 0 marks an invalid pixel.
pub fn read_depth_png16(path: &Path, scale: f64) -> Result<DepthMap, IoError> {
    let (w, h, raw) = decode_png16(&read_bytes(path)?).map_err(|e| e.at(path))?;
    let values = raw.iter().map(|&r| from_raw(r, scale)).collect();
    DepthMap::new(w, h, values).map_err(|e| ParseFailure::Format(e.to_string()).at(path))
}

pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<(), IoError> {
    write_file(path, &encode(img.width(), img.height(), BitDepth::Eight, img.data()))
}

pub fn read_gray_png(path: &Path) -> Result<GrayImage, IoError> {
    let (w, h, buf) = decode(&read_bytes(path)?, BitDepth::Eight).map_err(|e| e.at(path))?;
    GrayImage::new(w, h, buf).map_err(|e| ParseFailure::Format(e.to_string()).at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_values_round_trip() {
        let raw = vec![0, 1, 2560, u16::MAX, 300, 7];
        let png = encode_png16(3, 2, &raw);
        assert_eq!(decode_png16(&png).unwrap(), (3, 2, raw));
    }

    #[test]
    fn depth_conversion() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        std::fs::write(&p, encode_png16(2, 1, &[2560, 0])).unwrap();
        let d = read_depth_png16(&p, DEPTH_SCALE).unwrap();
        assert_eq!(d.get(0, 0), Some(10.0));
        assert_eq!(d.get(1, 0), None);
    }

    #[test]
    fn eight_bit_raster_is_not_depth() {
        let img = GrayImage::filled(4, 4, 9);
        let bytes = encode(4, 4, BitDepth::Eight, img.data());
        assert!(matches!(decode_png16(&bytes), Err(ParseFailure::Format(_))));
    }
}
