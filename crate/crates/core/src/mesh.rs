//! Triangle meshes and the ASCII OFF format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// A validated, manifold triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub name: String,
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Builds a mesh and checks every invariant.
    pub fn new(name: impl Into<String>, vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriMesh {
            name: name.into(),
            vertices,
            faces,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Squared length of the bounding-box diagonal.
    pub fn bbox_diagonal_sq(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        triangle_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, v) in self.vertices.iter().enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid("vertex", i, "non-finite coordinate"));
            }
        }
        for (f, face) in self.faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&i| i >= n) {
                return Err(invalid(
                    "face",
                    f,
                    format!("vertex index {bad} out of range for {n} vertices"),
                ));
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(invalid("face", f, "repeated vertex index"));
            }
        }
        let min_area = 1e-12 * self.bbox_diagonal_sq();
        for f in 0..self.faces.len() {
            let area = self.face_area(f);
            if !(area >= min_area) || area == 0.0 {
                return Err(invalid("face", f, format!("degenerate (area {area:e})")));
            }
        }
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for (f, face) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                let count = edge_count.entry((a.min(b), a.max(b))).or_insert(0);
                *count += 1;
                if *count > 2 {
                    return Err(invalid(
                        "face",
                        f,
                        format!("edge ({}, {}) shared by more than two faces", a.min(b), a.max(b)),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Returns a copy with every vertex multiplied by `s`.
    pub fn scaled(&self, s: f64) -> TriMesh {
        TriMesh {
            name: self.name.clone(),
            vertices: self.vertices.iter().map(|v| [v[0] * s, v[1] * s, v[2] * s]).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Applies `p -> R p + t` to every vertex.
    pub fn transformed(&self, rotation: &[[f64; 3]; 3], translation: Point3) -> TriMesh {
        let vertices = self
            .vertices
            .iter()
            .map(|p| {
                let mut q = translation;
                for (r, row) in rotation.iter().enumerate() {
                    q[r] += row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
                }
                q
            })
            .collect();
        TriMesh {
            name: self.name.clone(),
            vertices,
            faces: self.faces.clone(),
        }
    }

    /// Area-weighted vertex normals (unit length where defined).
    pub fn vertex_normals(&self) -> Vec<Point3> {
        let mut normals = vec![[0.0; 3]; self.vertices.len()];
        for face in &self.faces {
            let [a, b, c] = face.map(|i| self.vertices[i]);
            let n = cross(&sub(&b, &a), &sub(&c, &a));
            for &i in face {
                for k in 0..3 {
                    normals[i][k] += n[k];
                }
            }
        }
        for n in &mut normals {
            let len = norm(n);
            if len > 0.0 {
                n.iter_mut().for_each(|x| *x /= len);
            }
        }
        normals
    }

    pub fn to_off_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "OFF");
        let _ = writeln!(out, "{} {} 0", self.vertices.len(), self.faces.len());
        for v in &self.vertices {
            let _ = writeln!(out, "{} {} {}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
        }
        out
    }

    pub fn save_off<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        crate::io::write_atomic(path, self.to_off_string().as_bytes())
    }
}

fn invalid(element: &'static str, index: usize, reason: impl Into<String>) -> Error {
    Error::InvalidMesh {
        element,
        index,
        reason: reason.into(),
    }
}

pub(crate) fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn triangle_area(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    0.5 * norm(&cross(&sub(b, a), &sub(c, a)))
}

/// Loads an ASCII OFF file. The mesh name is the file stem.
pub fn load_off<P: AsRef<Path>>(path: P) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_off(&text, name)
}

/// Parses OFF text. Comments (`#`) and blank lines are skipped; the counts
/// may sit on the header line (`OFF 4 4 0`) or on the following line.
pub fn parse_off(text: &str, name: impl Into<String>) -> Result<TriMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("OFF") {
        return Err(Error::Parse {
            line: hline,
            message: format!("expected OFF header, found {header:?}"),
        });
    }
    let rest: Vec<&str> = tokens.collect();
    let (cline, counts) = if rest.is_empty() {
        let (l, c) = lines.next().ok_or(Error::Parse {
            line: hline + 1,
            message: "missing counts line".into(),
        })?;
        (l, c.split_whitespace().collect::<Vec<_>>())
    } else {
        (hline, rest)
    };
    if counts.len() < 2 {
        return Err(Error::Parse {
            line: cline,
            message: "counts line needs at least V and F".into(),
        });
    }
    let n_vertices: usize = parse_num(counts[0], cline)?;
    let n_faces: usize = parse_num(counts[1], cline)?;

    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (l, line) = lines.next().ok_or(Error::Parse {
            line: cline,
            message: format!("expected {n_vertices} vertices, found {}", vertices.len()),
        })?;
        let xs: Vec<&str> = line.split_whitespace().collect();
        if xs.len() < 3 {
            return Err(Error::Parse {
                line: l,
                message: "vertex line needs three coordinates".into(),
            });
        }
        vertices.push([parse_num(xs[0], l)?, parse_num(xs[1], l)?, parse_num(xs[2], l)?]);
    }

    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (l, line) = lines.next().ok_or(Error::Parse {
            line: cline,
            message: format!("expected {n_faces} faces, found {}", faces.len()),
        })?;
        let xs: Vec<&str> = line.split_whitespace().collect();
        let arity: usize = parse_num(xs[0], l)?;
        if arity != 3 {
            return Err(Error::Parse {
                line: l,
                message: format!("only triangles are supported, found a {arity}-gon"),
            });
        }
        if xs.len() < 4 {
            return Err(Error::Parse {
                line: l,
                message: "face line needs three indices".into(),
            });
        }
        faces.push([parse_num(xs[1], l)?, parse_num(xs[2], l)?, parse_num(xs[3], l)?]);
    }

    TriMesh::new(name, vertices, faces)
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {tok:?}"),
    })
}

/// Regular tetrahedron with unit edge length.
pub fn regular_tetrahedron() -> TriMesh {
    let s = 1.0 / 8f64.sqrt();
    let vertices = vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
    let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    TriMesh::new("tetrahedron", vertices, faces).expect("tetrahedron is valid")
}

/// Unit-radius icosphere obtained by `subdivisions` rounds of 4-to-1 splits
/// of an icosahedron.
pub fn icosphere(subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for v in &mut vertices {
        let n = norm(v);
        v.iter_mut().for_each(|x| *x /= n);
    }
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point3>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                let mut m = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0];
                let n = norm(&m);
                m.iter_mut().for_each(|x| *x /= n);
                vertices.push(m);
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(format!("icosphere{subdivisions}"), vertices, faces).expect("icosphere is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA_OFF: &str = "OFF\n4 4 6\n1 1 1\n1 -1 -1\n-1 1 -1\n-1 -1 1\n3 0 1 2\n3 0 3 1\n3 0 2 3\n3 1 3 2\n";

    #[test]
    fn parses_tetrahedron() {
        let m = parse_off(TETRA_OFF, "t").unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_faces(), 4);
        assert_eq!(m.vertices[1], [1.0, -1.0, -1.0]);
    }

    #[test]
    fn header_with_inline_counts_and_comments() {
        let text = "# a comment\nOFF 4 4 0\n1 1 1\n1 -1 -1 # trailing\n-1 1 -1\n\n-1 -1 1\n3 0 1 2\n3 0 3 1\n3 0 2 3\n3 1 3 2\n";
        assert_eq!(parse_off(text, "t").unwrap().n_faces(), 4);
    }

    #[test]
    fn out_of_range_index_names_face() {
        let text = TETRA_OFF.replace("3 0 1 2", "3 0 1 9");
        match parse_off(&text, "t") {
            Err(Error::InvalidMesh { element, index, .. }) => {
                assert_eq!(element, "face");
                assert_eq!(index, 0);
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_and_counts() {
        assert!(matches!(parse_off("PLY\n", "x"), Err(Error::Parse { .. })));
        assert!(matches!(parse_off("OFF\n4\n", "x"), Err(Error::Parse { .. })));
        assert!(matches!(parse_off("OFF\n4 4 0\n1 1 1\n", "x"), Err(Error::Parse { .. })));
        assert!(matches!(parse_off("OFF\n1 0 0\n1 a 1\n", "x"), Err(Error::Parse { .. })));
        let quad = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        assert!(matches!(parse_off(quad, "x"), Err(Error::Parse { .. })));
    }

    #[test]
    fn rejects_repeated_index_and_degenerate_face() {
        let rep = TETRA_OFF.replace("3 0 3 1", "3 0 3 3");
        assert!(matches!(
            parse_off(&rep, "t"),
            Err(Error::InvalidMesh { index: 1, .. })
        ));
        let collinear = "OFF\n3 1 0\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n";
        assert!(matches!(
            parse_off(collinear, "t"),
            Err(Error::InvalidMesh { index: 0, .. })
        ));
    }

    #[test]
    fn rejects_non_manifold_edge() {
        // three triangles fanned around edge (0, 1)
        let text = "OFF\n5 3 0\n0 0 0\n1 0 0\n0 1 0\n0 -1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 1 4\n";
        assert!(matches!(
            parse_off(text, "t"),
            Err(Error::InvalidMesh { index: 2, .. })
        ));
    }

    #[test]
    fn icosphere_counts() {
        let m = icosphere(3);
        assert_eq!(m.n_vertices(), 642);
        assert_eq!(m.n_faces(), 1280);
        for v in &m.vertices {
            assert!((norm(v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn off_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ico.off");
        let m = icosphere(3);
        m.save_off(&path).unwrap();
        let back = load_off(&path).unwrap();
        assert_eq!(back.name, "ico");
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.faces, m.faces);
    }
}
