//! Small line-oriented records and the binary vocabulary.

use std::fmt::Write as _;
use std::path::Path;

use flowslam_core::geom::Motion6DoF;
use flowslam_core::reloc::{BinaryDescriptor, LoopCandidate, Vocabulary, DESCRIPTOR_BITS};

use super::{data_lines, fmt_f64, parse_float, parse_index, read_bytes, read_text, write_file, IoError, ParseFailure};

/// An externally predicted relative motion of frame pair `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub i: usize,
    pub j: usize,
    pub motion: Motion6DoF,
}

fn motion_fields(m: &Motion6DoF) -> String {
    m.to_array().iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")
}

fn parse_motion(n: usize, f: &[&str], first: usize) -> Result<Motion6DoF, ParseFailure> {
    let mut a = [0.0; 6];
    for k in 0..6 {
        a[k] = parse_float(n, first + k + 1, f[first + k])?;
    }
    Ok(Motion6DoF::from_array(a))
}

fn split_exact<'a>(n: usize, line: &'a str, count: usize, what: &str) -> Result<Vec<&'a str>, ParseFailure> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != count {
        return Err(ParseFailure::Line(n, format!("{what} needs {count} fields, found {}", f.len())));
    }
    Ok(f)
}

/// Lines `i j tx ty tz alpha beta gamma`.
pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), IoError> {
    let mut s = String::from("# i j tx ty tz alpha beta gamma\n");
    for p in preds {
        let _ = writeln!(s, "{} {} {}", p.i, p.j, motion_fields(&p.motion));
    }
    write_file(path, s.as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, IoError> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(n, line)| {
            let f = split_exact(n, line, 8, "prediction")?;
            Ok(Prediction {
                i: parse_index(n, 1, f[0])?,
                j: parse_index(n, 2, f[1])?,
                motion: parse_motion(n, &f, 2)?,
            })
        })
        .collect::<Result<_, ParseFailure>>()
        .map_err(|e| e.at(path))
}

/// One synthesized training sample: the flow file, the depth frame it was
/// generated from, and the motion.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionRecord {
    pub sample: usize,
    pub depth_frame: usize,
    pub motion: Motion6DoF,
}

/// Lines `sample depth_frame tx ty tz alpha beta gamma`.
pub fn write_motion_records(path: &Path, records: &[MotionRecord]) -> Result<(), IoError> {
    let mut s = String::from("# sample depth_frame tx ty tz alpha beta gamma\n");
    for r in records {
        let _ = writeln!(s, "{} {} {}", r.sample, r.depth_frame, motion_fields(&r.motion));
    }
    write_file(path, s.as_bytes())
}

pub fn read_motion_records(path: &Path) -> Result<Vec<MotionRecord>, IoError> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(n, line)| {
            let f = split_exact(n, line, 8, "motion record")?;
            Ok(MotionRecord {
                sample: parse_index(n, 1, f[0])?,
                depth_frame: parse_index(n, 2, f[1])?,
                motion: parse_motion(n, &f, 2)?,
            })
        })
        .collect::<Result<_, ParseFailure>>()
        .map_err(|e| e.at(path))
}

/// Lines `i j matches passed`, with `passed` as 0 or 1.
pub fn write_candidates(path: &Path, cands: &[LoopCandidate]) -> Result<(), IoError> {
    let mut s = String::from("# i j matches passed\n");
    for c in cands {
        let _ = writeln!(s, "{} {} {} {}", c.i, c.j, c.matches, c.passed as u8);
    }
    write_file(path, s.as_bytes())
}

pub fn read_candidates(path: &Path) -> Result<Vec<LoopCandidate>, IoError> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(n, line)| {
            let f = split_exact(n, line, 4, "candidate")?;
            let passed = match f[3] {
                "0" => false,
                "1" => true,
                other => return Err(ParseFailure::Line(n, format!("field 4: `{other}` is not 0 or 1"))),
            };
            Ok(LoopCandidate {
                i: parse_index(n, 1, f[0])?,
                j: parse_index(n, 2, f[1])?,
                matches: parse_index(n, 3, f[2])?,
                passed,
            })
        })
        .collect::<Result<_, ParseFailure>>()
        .map_err(|e| e.at(path))
}

pub const VOCAB_MAGIC: &[u8; 8] = b"FSVOCAB1";

/// Magic, word count and descriptor bits (u32 each), then each centroid as
/// four u64 words.
pub fn encode_vocabulary(v: &Vocabulary) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 32 * v.k());
    out.extend_from_slice(VOCAB_MAGIC);
    out.extend_from_slice(&(v.k() as u32).to_le_bytes());
    out.extend_from_slice(&(DESCRIPTOR_BITS as u32).to_le_bytes());
    for c in v.centroids() {
        for w in c.0 {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

pub fn decode_vocabulary(bytes: &[u8]) -> Result<Vocabulary, ParseFailure> {
    if bytes.len() < 16 {
        return Err(ParseFailure::Binary(bytes.len(), "truncated header".into()));
    }
    if &bytes[..8] != VOCAB_MAGIC {
        return Err(ParseFailure::Binary(0, "bad magic".into()));
    }
    let k = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let bits = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if bits != DESCRIPTOR_BITS {
        return Err(ParseFailure::Binary(12, format!("{bits}-bit descriptors, expected {DESCRIPTOR_BITS}")));
    }
    let need = 16 + 32 * k;
    if bytes.len() != need {
        return Err(ParseFailure::Binary(bytes.len().min(need), format!("expected {need} bytes")));
    }
    let centroids = bytes[16..]
        .chunks_exact(32)
        .map(|c| {
            let mut d = [0u64; 4];
            for (w, b) in d.iter_mut().zip(c.chunks_exact(8)) {
                *w = u64::from_le_bytes(b.try_into().expect("8 bytes"));
            }
            BinaryDescriptor(d)
        })
        .collect();
    Vocabulary::from_centroids(centroids).map_err(|e| ParseFailure::Binary(16, e.to_string()))
}

pub fn write_vocabulary(path: &Path, v: &Vocabulary) -> Result<(), IoError> {
    write_file(path, &encode_vocabulary(v))
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary, IoError> {
    decode_vocabulary(&read_bytes(path)?).map_err(|e| e.at(path))
}

/// Ordered `key = value` pairs describing how an output tree was made.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<(), IoError> {
    let mut s = String::new();
    for (k, v) in &m.entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    write_file(path, s.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest, IoError> {
    let text = read_text(path)?;
    let mut m = Manifest::default();
    for (n, line) in data_lines(&text) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ParseFailure::Line(n, "expected `key = value`".into()).at(path))?;
        m.push(k.trim(), v.trim());
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_round_trip() {
        let v = Vocabulary::from_centroids(vec![BinaryDescriptor([1, 2, 3, u64::MAX]), BinaryDescriptor([0; 4])]).unwrap();
        let bytes = encode_vocabulary(&v);
        assert_eq!(bytes.len(), 16 + 64);
        assert_eq!(decode_vocabulary(&bytes).unwrap(), v);
        assert!(decode_vocabulary(&bytes[..70]).is_err());
    }

    #[test]
    fn prediction_and_candidate_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.txt");
        let preds = vec![Prediction {
            i: 3,
            j: 90,
            motion: Motion6DoF::new(0.1, -2.5e-7, 1.0, 0.3, -0.2, 1e-300),
        }];
        write_predictions(&p, &preds).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), preds);
        let c = dir.path().join("cand.txt");
        let cands = vec![LoopCandidate {
            i: 1,
            j: 70,
            matches: 33,
            passed: true,
        }];
        write_candidates(&c, &cands).unwrap();
        assert_eq!(read_candidates(&c).unwrap(), cands);
        std::fs::write(&c, "1 2 3 yes\n").unwrap();
        assert!(matches!(read_candidates(&c), Err(IoError::Line { line: 1, .. })));
    }
}
