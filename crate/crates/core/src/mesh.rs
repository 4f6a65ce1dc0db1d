//! Triangle meshes and ASCII mesh I/O.
//!
//! A [`TriMesh`] is validated on construction: indices are in range, no face
//! repeats a vertex, and no face is degenerate relative to the mean face area.
//! OBJ is supported for reading and writing, OFF for reading only.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use faer::Mat;
use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Relative area threshold for degenerate-face rejection.
pub const DEGENERATE_AREA_RATIO: f64 = 1e-9;

/// Triangle mesh with counterclockwise faces.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Builds a mesh, rejecting out-of-range indices and degenerate faces.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        validate(&vertices, &faces)?;
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity, new positions. The result is validated.
    pub fn with_vertices(&self, vertices: Vec<Vector3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Self::new(vertices, self.faces.clone())
    }

    /// Vertex positions as an `n x 3` matrix.
    pub fn vertex_matrix(&self) -> Mat<f64> {
        positions_to_mat(&self.vertices)
    }

    pub fn face_area(&self, f: usize) -> f64 {
        triangle_area(&self.vertices, self.faces[f])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.vertices.iter().sum();
        sum / self.vertices.len() as f64
    }

    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Copy scaled about the origin so the surface area is one.
    pub fn unit_area(&self) -> TriMesh {
        let s = 1.0 / self.total_area().sqrt();
        TriMesh {
            vertices: self.vertices.iter().map(|v| v * s).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Uniformly scaled copy.
    pub fn scaled(&self, s: f64) -> Result<TriMesh> {
        self.with_vertices(self.vertices.iter().map(|v| v * s).collect())
    }

    /// Number of edge-connected components (over faces).
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in &self.faces {
            for k in 0..3 {
                let a = find(&mut parent, f[k]);
                let b = find(&mut parent, f[(k + 1) % 3]);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                used[v] = true;
            }
        }
        (0..self.vertices.len())
            .filter(|&v| used[v] && find(&mut parent, v) == v)
            .count()
    }

    /// Vertices not referenced by any face.
    pub fn isolated_vertices(&self) -> Vec<usize> {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                used[v] = true;
            }
        }
        used.iter()
            .enumerate()
            .filter_map(|(i, &u)| (!u).then_some(i))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_off = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("off"));
        if is_off {
            parse_off(&text)
        } else {
            parse_obj(&text)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }

    /// ASCII OBJ with shortest round-trip float formatting.
    pub fn to_obj_string(&self) -> String {
        write_obj(&self.vertices, &self.faces)
    }
}

/// Formats positions and faces as OBJ text without validation.
pub fn write_obj(vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> String {
    let mut out = String::with_capacity(vertices.len() * 48 + faces.len() * 24);
    for v in vertices {
        // `{:?}` on f64 prints the shortest string that round-trips exactly.
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub(crate) fn triangle_area(v: &[Vector3<f64>], f: [usize; 3]) -> f64 {
    0.5 * (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]])).norm()
}

pub fn positions_to_mat(v: &[Vector3<f64>]) -> Mat<f64> {
    Mat::from_fn(v.len(), 3, |i, j| v[i][j])
}

pub fn mat_to_positions(m: &Mat<f64>) -> Vec<Vector3<f64>> {
    assert_eq!(m.ncols(), 3, "position matrix must have 3 columns");
    (0..m.nrows())
        .map(|i| Vector3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)]))
        .collect()
}

fn validate(vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Result<()> {
    if faces.is_empty() {
        return Err(Error::InvalidArgument("mesh has no faces".into()));
    }
    if let Some((i, _)) = vertices
        .iter()
        .enumerate()
        .find(|(_, v)| !v.iter().all(|c| c.is_finite()))
    {
        return Err(Error::InvalidArgument(format!(
            "vertex {i} has non-finite coordinates"
        )));
    }
    for (fi, f) in faces.iter().enumerate() {
        for &idx in f {
            if idx >= vertices.len() {
                return Err(Error::IndexOutOfRange {
                    face: fi,
                    index: idx,
                    count: vertices.len(),
                });
            }
        }
    }
    let repeated: Vec<usize> = faces
        .iter()
        .enumerate()
        .filter(|(_, f)| f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
        .map(|(i, _)| i)
        .collect();
    if !repeated.is_empty() {
        return Err(Error::DegenerateFaces { faces: repeated });
    }
    let areas: Vec<f64> = faces.iter().map(|&f| triangle_area(vertices, f)).collect();
    let mean = areas.iter().sum::<f64>() / faces.len() as f64;
    let threshold = DEGENERATE_AREA_RATIO * mean;
    let tiny: Vec<usize> = areas
        .iter()
        .enumerate()
        .filter(|(_, &a)| !(a > threshold))
        .map(|(i, _)| i)
        .collect();
    if !tiny.is_empty() {
        return Err(Error::DegenerateFaces { faces: tiny });
    }
    Ok(())
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        message: "missing coordinate".into(),
    })?;
    tok.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid number `{tok}`"),
    })
}

/// Parses ASCII OBJ. Only `v` and `f` records are interpreted; polygons are
/// fan-triangulated and `v/vt/vn` index forms are accepted.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), line)?;
                let y = parse_f64(toks.next(), line)?;
                let z = parse_f64(toks.next(), line)?;
                vertices.push(Vector3::new(x, y, z));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in toks {
                    let head = tok.split('/').next().unwrap_or("");
                    let idx: i64 = head.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("invalid face index `{tok}`"),
                    })?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(Error::Parse {
                            line,
                            message: "face index 0 is invalid in OBJ".into(),
                        });
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(Error::Parse {
                            line,
                            message: format!(
                                "face index {idx} out of range ({} vertices so far)",
                                vertices.len()
                            ),
                        });
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        message: "face with fewer than 3 vertices".into(),
                    });
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

/// Parses ASCII OFF.
pub fn parse_off(text: &str) -> Result<TriMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let mut counts_tokens: Vec<&str> = header.split_whitespace().collect();
    if counts_tokens.first().is_some_and(|t| t.ends_with("OFF")) {
        counts_tokens.remove(0);
    } else {
        return Err(Error::Parse {
            line: hl,
            message: "missing OFF header".into(),
        });
    }
    let counts_line;
    if counts_tokens.is_empty() {
        let (l, c) = lines.next().ok_or(Error::Parse {
            line: hl,
            message: "missing element counts".into(),
        })?;
        counts_line = l;
        counts_tokens = c.split_whitespace().collect();
    } else {
        counts_line = hl;
    }
    let parse_count = |t: Option<&&str>| -> Result<usize> {
        t.and_then(|s| s.parse().ok()).ok_or(Error::Parse {
            line: counts_line,
            message: "invalid element counts".into(),
        })
    };
    let nv = parse_count(counts_tokens.first())?;
    let nf = parse_count(counts_tokens.get(1))?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, l) = lines.next().ok_or(Error::Parse {
            line: counts_line,
            message: "unexpected end of vertex list".into(),
        })?;
        let mut t = l.split_whitespace();
        let x = parse_f64(t.next(), line)?;
        let y = parse_f64(t.next(), line)?;
        let z = parse_f64(t.next(), line)?;
        vertices.push(Vector3::new(x, y, z));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, l) = lines.next().ok_or(Error::Parse {
            line: counts_line,
            message: "unexpected end of face list".into(),
        })?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid index `{t}`"),
                })
            })
            .collect::<Result<_>>()?;
        let n = *idx.first().ok_or(Error::Parse {
            line,
            message: "empty face record".into(),
        })?;
        if n < 3 || idx.len() < n + 1 {
            return Err(Error::Parse {
                line,
                message: "malformed face record".into(),
            });
        }
        let poly = &idx[1..=n];
        if let Some(&bad) = poly.iter().find(|&&i| i >= nv) {
            return Err(Error::Parse {
                line,
                message: format!("face index {bad} out of range"),
            });
        }
        for k in 1..n - 1 {
            faces.push([poly[0], poly[k], poly[k + 1]]);
        }
    }
    TriMesh::new(vertices, faces)
}
