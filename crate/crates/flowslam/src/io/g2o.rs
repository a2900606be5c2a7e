//! g2o graph dump with `VERTEX_SE3:QUAT`, `EDGE_SE3:QUAT` and `FIX` records.
//!
//! Edge information is the 6x6 matrix over `(t, qx, qy, qz)`, written as its
//! upper triangle row by row (21 numbers).

use std::fmt::Write as _;
use std::path::Path;

use flowslam_core::geom::{Motion6DoF, UnitQuat};
use flowslam_core::posegraph::{information_from_minimal, information_to_minimal, EdgeKind, MotionEdge};
use flowslam_core::{PoseGraph, SE3Pose};
use nalgebra::{Matrix6, Vector3};

use super::{data_lines, fmt_f64, parse_float, parse_index, read_text, write_file, IoError, ParseFailure};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2oVertex {
    pub id: usize,
    pub translation: [f64; 3],
    pub rotation: UnitQuat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2oEdge {
    pub i: usize,
    pub j: usize,
    pub translation: [f64; 3],
    pub rotation: UnitQuat,
    pub information: [f64; 21],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct G2oGraph {
    pub vertices: Vec<G2oVertex>,
    pub edges: Vec<G2oEdge>,
    pub fixed: Vec<usize>,
}

fn upper_triangle(m: &Matrix6<f64>) -> [f64; 21] {
    let mut out = [0.0; 21];
    let mut k = 0;
    for r in 0..6 {
        for c in r..6 {
            out[k] = m[(r, c)];
            k += 1;
        }
    }
    out
}

fn from_upper_triangle(v: &[f64; 21]) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let mut k = 0;
    for r in 0..6 {
        for c in r..6 {
            m[(r, c)] = v[k];
            m[(c, r)] = v[k];
            k += 1;
        }
    }
    m
}

fn pose_fields(t: &[f64; 3], q: &UnitQuat) -> String {
    [t[0], t[1], t[2], q.x, q.y, q.z, q.w]
        .iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

impl G2oGraph {
    pub fn from_pose_graph(g: &PoseGraph) -> Self {
        let vertices = g
            .nodes
            .iter()
            .enumerate()
            .map(|(id, p)| G2oVertex {
                id,
                translation: p.translation.into(),
                rotation: p.quaternion(),
            })
            .collect();
        let edges = g
            .edges
            .iter()
            .map(|e| {
                let m = e.measurement();
                let q = m.quaternion();
                G2oEdge {
                    i: e.i,
                    j: e.j,
                    translation: m.translation.into(),
                    rotation: q,
                    information: upper_triangle(&information_to_minimal(&e.information, &q)),
                }
            })
            .collect();
        G2oGraph {
            vertices,
            edges,
            fixed: vec![g.anchor],
        }
    }

    /// Vertex ids must be `0..n` in order. Edges between neighbouring ids are
    /// consecutive, all others loops. The anchor is the first fixed vertex.
    pub fn to_pose_graph(&self) -> Result<PoseGraph, String> {
        if let Some((k, v)) = self.vertices.iter().enumerate().find(|(k, v)| v.id != *k) {
            return Err(format!("vertex {} at position {k}; ids must be 0..n in order", v.id));
        }
        let nodes = self
            .vertices
            .iter()
            .map(|v| SE3Pose::from_quat_translation(&v.rotation, Vector3::from(v.translation)))
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let meas = SE3Pose::from_quat_translation(&e.rotation, Vector3::from(e.translation));
                MotionEdge {
                    i: e.i,
                    j: e.j,
                    motion: Motion6DoF::from_se3(&meas),
                    information: information_from_minimal(&from_upper_triangle(&e.information), &e.rotation),
                    kind: if e.j == e.i + 1 { EdgeKind::Consecutive } else { EdgeKind::Loop },
                }
            })
            .collect();
        Ok(PoseGraph::new(nodes, edges, self.fixed.first().copied().unwrap_or(0)))
    }
}

pub fn format_g2o(g: &G2oGraph) -> String {
    let mut s = String::new();
    for v in &g.vertices {
        let _ = writeln!(s, "VERTEX_SE3:QUAT {} {}", v.id, pose_fields(&v.translation, &v.rotation));
    }
    for id in &g.fixed {
        let _ = writeln!(s, "FIX {id}");
    }
    for e in &g.edges {
        let info: Vec<String> = e.information.iter().map(|v| fmt_f64(*v)).collect();
        let _ = writeln!(
            s,
            "EDGE_SE3:QUAT {} {} {} {}",
            e.i,
            e.j,
            pose_fields(&e.translation, &e.rotation),
            info.join(" ")
        );
    }
    s
}

fn floats<const N: usize>(n: usize, fields: &[&str], first: usize) -> Result<[f64; N], ParseFailure> {
    let mut out = [0.0; N];
    for k in 0..N {
        out[k] = parse_float(n, first + k + 1, fields[first + k])?;
    }
    Ok(out)
}

fn quat(v: &[f64]) -> UnitQuat {
    UnitQuat::from_components_unchecked(v[3], v[0], v[1], v[2])
}

pub fn parse_g2o(text: &str) -> Result<G2oGraph, ParseFailure> {
    let mut g = G2oGraph::default();
    for (n, line) in data_lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let need = |count: usize| {
            if f.len() == count {
                Ok(())
            } else {
                Err(ParseFailure::Line(n, format!("{} needs {count} fields, found {}", f[0], f.len())))
            }
        };
        match f[0] {
            "VERTEX_SE3:QUAT" => {
                need(9)?;
                let p = floats::<7>(n, &f, 2)?;
                g.vertices.push(G2oVertex {
                    id: parse_index(n, 2, f[1])?,
                    translation: [p[0], p[1], p[2]],
                    rotation: quat(&p[3..]),
                });
            }
            "EDGE_SE3:QUAT" => {
                need(31)?;
                let p = floats::<7>(n, &f, 3)?;
                g.edges.push(G2oEdge {
                    i: parse_index(n, 2, f[1])?,
                    j: parse_index(n, 3, f[2])?,
                    translation: [p[0], p[1], p[2]],
                    rotation: quat(&p[3..]),
                    information: floats::<21>(n, &f, 10)?,
                });
            }
            "FIX" => {
                need(2)?;
                g.fixed.push(parse_index(n, 2, f[1])?);
            }
            other => return Err(ParseFailure::Line(n, format!("unknown record `{other}`"))),
        }
    }
    Ok(g)
}

pub fn write_g2o(path: &Path, g: &G2oGraph) -> Result<(), IoError> {
    write_file(path, format_g2o(g).as_bytes())
}

pub fn read_g2o(path: &Path) -> Result<G2oGraph, IoError> {
    parse_g2o(&read_text(path)?).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use flowslam_core::posegraph::{build_graph, BuildOptions, HyperParams, SigmaParams};
    use flowslam_core::vo::MotionEstimate;

    fn graph() -> PoseGraph {
        let m = Motion6DoF::new(0.3, -0.1, 1.0, 0.02, -0.05, 0.1);
        let odo: Vec<_> = (0..4).map(|_| MotionEstimate::from_motion(m, Matrix6::identity())).collect();
        build_graph(&odo, &[], &SigmaParams::default(), &HyperParams::default(), BuildOptions::default()).unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        let g = G2oGraph::from_pose_graph(&graph());
        let text = format_g2o(&g);
        let back = parse_g2o(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(format_g2o(&back), text);
    }

    #[test]
    fn conversion_back_preserves_graph() {
        let pg = graph();
        let back = G2oGraph::from_pose_graph(&pg).to_pose_graph().unwrap();
        assert_eq!(back.nodes.len(), pg.nodes.len());
        for (a, b) in back.nodes.iter().zip(&pg.nodes) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        for (a, b) in back.edges.iter().zip(&pg.edges) {
            assert!(a.measurement().max_abs_diff(&b.measurement()) < 1e-12);
            let scale = b.information.amax();
            assert!((a.information - b.information).amax() < 1e-9 * scale);
        }
    }

    #[test]
    fn unknown_record_is_rejected() {
        assert!(matches!(parse_g2o("VERTEX_XYZ 0 1 2 3"), Err(ParseFailure::Line(1, _))));
    }
}
