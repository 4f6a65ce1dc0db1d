//! Discrete differential operators on a triangle mesh.
//!
//! Conventions: the Laplacian is the positive semi-definite cotangent matrix
//! (`Δ = ∇ᵀ A ∇`), the mass matrix uses mixed Voronoi areas, and the gradient
//! stacks one 3-row block per face (`row = 3 f + axis`).

use std::collections::HashMap;

use faer::{Mat, MatRef};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::sparse::Csr;

/// Operators for one mesh. Immutable after construction.
#[derive(Debug, Clone)]
pub struct DifferentialOperators {
    num_vertices: usize,
    faces: Vec<[usize; 3]>,
    laplacian: Csr,
    mass: Vec<f64>,
    gradient: Csr,
    face_areas: Vec<f64>,
    face_to_vertex: Csr,
    vertex_to_face: Csr,
    face_adjacency: Csr,
    edges: Vec<(usize, usize)>,
}

impl DifferentialOperators {
    /// Builds all operators. Fails on isolated vertices, which would make the
    /// mass matrix singular.
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        let isolated = mesh.isolated_vertices();
        if !isolated.is_empty() {
            return Err(Error::IsolatedVertices { vertices: isolated });
        }
        let v = mesh.vertices();
        let faces = mesh.faces();
        let n = v.len();
        let nf = faces.len();

        let mut lap = Vec::with_capacity(nf * 9);
        let mut grad = Vec::with_capacity(nf * 9);
        let mut mass = vec![0.0; n];
        let mut face_areas = Vec::with_capacity(nf);

        for (fi, &f) in faces.iter().enumerate() {
            let p = [v[f[0]], v[f[1]], v[f[2]]];
            let cross = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let dbl = cross.norm();
            if !(dbl > 0.0) {
                return Err(Error::DegenerateFaces { faces: vec![fi] });
            }
            let area = 0.5 * dbl;
            face_areas.push(area);
            let normal = cross / dbl;

            // Cotangent of the angle at each corner.
            let mut cot = [0.0; 3];
            for c in 0..3 {
                let a = p[(c + 1) % 3] - p[c];
                let b = p[(c + 2) % 3] - p[c];
                cot[c] = a.dot(&b) / a.cross(&b).norm();
            }
            for c in 0..3 {
                let i = f[(c + 1) % 3];
                let j = f[(c + 2) % 3];
                let w = 0.5 * cot[c];
                lap.push((i, j, -w));
                lap.push((j, i, -w));
                lap.push((i, i, w));
                lap.push((j, j, w));
            }

            // Hat-function gradients: ∇φ_c = N × (p_{c+2} - p_{c+1}) / 2A.
            for c in 0..3 {
                let g = normal.cross(&(p[(c + 2) % 3] - p[(c + 1) % 3])) / dbl;
                for d in 0..3 {
                    grad.push((3 * fi + d, f[c], g[d]));
                }
            }

            // Mixed Voronoi areas.
            let obtuse = (0..3).find(|&c| cot[c] < 0.0);
            match obtuse {
                None => {
                    for c in 0..3 {
                        let e_next = (p[(c + 1) % 3] - p[c]).norm_squared();
                        let e_prev = (p[(c + 2) % 3] - p[c]).norm_squared();
                        mass[f[c]] += 0.125 * (e_next * cot[(c + 2) % 3] + e_prev * cot[(c + 1) % 3]);
                    }
                }
                Some(o) => {
                    for c in 0..3 {
                        mass[f[c]] += if c == o { 0.5 * area } else { 0.25 * area };
                    }
                }
            }
        }

        let laplacian = Csr::from_triplets(n, n, &lap);
        let gradient = Csr::from_triplets(3 * nf, n, &grad);

        let mut valence = vec![0usize; n];
        for f in faces {
            for &i in f {
                valence[i] += 1;
            }
        }
        let mut f2v = Vec::with_capacity(3 * nf);
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                f2v.push((i, fi, 1.0 / valence[i] as f64));
            }
        }
        let face_to_vertex = Csr::from_triplets(n, nf, &f2v);

        // Row-normalized transpose of the face-to-vertex averager.
        let mut v2f = Vec::with_capacity(3 * nf);
        for (fi, f) in faces.iter().enumerate() {
            let w: [f64; 3] = [0, 1, 2].map(|c| 1.0 / valence[f[c]] as f64);
            let s: f64 = w.iter().sum();
            for c in 0..3 {
                v2f.push((fi, f[c], w[c] / s));
            }
        }
        let vertex_to_face = Csr::from_triplets(nf, n, &v2f);

        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for c in 0..3 {
                let (a, b) = (f[c], f[(c + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let mut edges: Vec<(usize, usize)> = edge_faces.keys().copied().collect();
        edges.sort_unstable();
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); nf];
        for e in &edges {
            let fs = &edge_faces[e];
            for &a in fs {
                for &b in fs {
                    if a != b && !neighbors[a].contains(&b) {
                        neighbors[a].push(b);
                    }
                }
            }
        }
        let mut adj = Vec::new();
        for (fi, nb) in neighbors.iter().enumerate() {
            if nb.is_empty() {
                // An isolated face averages to itself.
                adj.push((fi, fi, 1.0));
            } else {
                let w = 1.0 / nb.len() as f64;
                adj.extend(nb.iter().map(|&g| (fi, g, w)));
            }
        }
        let face_adjacency = Csr::from_triplets(nf, nf, &adj);

        Ok(Self {
            num_vertices: n,
            faces: faces.to_vec(),
            laplacian,
            mass,
            gradient,
            face_areas,
            face_to_vertex,
            vertex_to_face,
            face_adjacency,
            edges,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Cotangent Laplacian, `|V| x |V|`, positive semi-definite.
    pub fn laplacian(&self) -> &Csr {
        &self.laplacian
    }

    /// Diagonal of the lumped mass matrix.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn mass_matrix(&self) -> Csr {
        Csr::diagonal(&self.mass)
    }

    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    /// Gradient, `3|F| x |V|`.
    pub fn gradient(&self) -> &Csr {
        &self.gradient
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    /// Diagonal of `A`: each face area repeated three times.
    pub fn stacked_areas(&self) -> Vec<f64> {
        self.face_areas.iter().flat_map(|&a| [a, a, a]).collect()
    }

    /// `I`: averages per-face quantities onto vertices (`|V| x |F|`).
    pub fn face_to_vertex(&self) -> &Csr {
        &self.face_to_vertex
    }

    /// Row-normalized `Iᵀ`: averages per-vertex quantities onto faces.
    pub fn vertex_to_face(&self) -> &Csr {
        &self.vertex_to_face
    }

    /// `H`: per-face mean over edge-adjacent faces.
    pub fn face_adjacency(&self) -> &Csr {
        &self.face_adjacency
    }

    /// Unique undirected edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Number of connected components of the edge graph.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.num_vertices).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut count = self.num_vertices;
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
                count -= 1;
            }
        }
        count
    }

    /// Content hash of the connectivity, Laplacian and mass; used as a cache
    /// key for factorizations.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.num_vertices.hash(&mut h);
        self.faces.hash(&mut h);
        for (r, c, v) in self.laplacian.triplets() {
            (r, c, v.to_bits()).hash(&mut h);
        }
        for m in &self.mass {
            m.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// `∇ᵀ A J` for a stacked `3|F| x 3` Jacobian matrix.
    pub fn divergence(&self, stacked: MatRef<'_, f64>) -> Mat<f64> {
        let a = self.stacked_areas();
        let mut weighted = stacked.to_owned();
        for r in 0..weighted.nrows() {
            for c in 0..weighted.ncols() {
                weighted[(r, c)] *= a[r];
            }
        }
        self.gradient.tmul_dense(weighted.as_ref())
    }

    /// Adjoint of [`divergence`](Self::divergence): `A ∇ g`.
    pub fn divergence_adjoint(&self, g: MatRef<'_, f64>) -> Mat<f64> {
        let a = self.stacked_areas();
        let mut out = self.gradient.mul_dense(g);
        for r in 0..out.nrows() {
            for c in 0..out.ncols() {
                out[(r, c)] *= a[r];
            }
        }
        out
    }

    /// `Δ` as assembled from the gradient: `∇ᵀ A ∇`.
    pub fn laplacian_from_gradient(&self) -> Csr {
        let a = self.stacked_areas();
        self.gradient
            .transpose()
            .matmul(&self.gradient.scale_rows(&a))
    }
}

/// Per-vertex area-weighted normals (unit length; zero where undefined).
pub fn vertex_normals(positions: &[Vector3<f64>], faces: &[[usize; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); positions.len()];
    for f in faces {
        let c = (positions[f[1]] - positions[f[0]]).cross(&(positions[f[2]] - positions[f[0]]));
        for &i in f {
            acc[i] += c;
        }
    }
    acc.into_iter()
        .map(|n| {
            let l = n.norm();
            if l > 0.0 {
                n / l
            } else {
                Vector3::zeros()
            }
        })
        .collect()
}
