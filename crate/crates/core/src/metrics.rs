//! Map and deformation quality measures.
//!
//! Map metrics evaluate on unit-area copies of the inputs, so they are
//! invariant to uniform scaling of either mesh.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::deform::JacobianField;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::operators::{vertex_normals, DifferentialOperators};
use crate::spectral::maps::validate_p2p;

/// Summary of one map. `geodesic_error` needs a ground-truth map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    /// Mean graph-geodesic error on the unit-area target, ×100.
    pub geodesic_error: Option<f64>,
    /// Percentage of target vertices with inverted accumulated normals.
    pub inversion: f64,
    pub dirichlet: f64,
    /// Percentage of target area hit by the map.
    pub coverage: f64,
}

impl MapReport {
    /// Single-line JSON record.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Evaluates a hard map `source → target`.
pub fn evaluate_map(source: &TriMesh, target: &TriMesh, map: &[usize], gt: Option<&[usize]>) -> Result<MapReport> {
    validate_p2p(map, source.num_vertices(), target.num_vertices())?;
    let src_ops = DifferentialOperators::new(source)?;
    let tgt_ops = DifferentialOperators::new(target)?;
    let geodesic_error = match gt {
        Some(gt) => Some(geodesic_error(map, gt, target)?),
        None => None,
    };
    Ok(MapReport {
        geodesic_error,
        inversion: inversion_rate(map, source, target)?,
        dirichlet: dirichlet_energy(map, &src_ops, target)?,
        coverage: coverage(map, tgt_ops.mass())?,
    })
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Edge-graph adjacency with Euclidean weights scaled by `scale`.
fn edge_graph(mesh: &TriMesh, scale: f64) -> Vec<Vec<(usize, f64)>> {
    let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); mesh.num_vertices()];
    let v = mesh.vertices();
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let w = (v[a] - v[b]).norm() * scale;
            adj[a].insert(b, w);
            adj[b].insert(a, w);
        }
    }
    adj.into_iter().map(|m| m.into_iter().collect()).collect()
}

fn dijkstra(adj: &[Vec<(usize, f64)>], src: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Entry(0.0, src));
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
    dist
}

/// Shortest edge-path distances from `src` on the unit-area copy of `mesh`.
pub fn graph_distances(mesh: &TriMesh, src: usize) -> Vec<f64> {
    let scale = 1.0 / mesh.total_area().sqrt();
    dijkstra(&edge_graph(mesh, scale), src)
}

/// Mean graph-geodesic distance between mapped and ground-truth images on
/// the unit-area target, ×100.
pub fn geodesic_error(map: &[usize], gt: &[usize], target: &TriMesh) -> Result<f64> {
    if map.len() != gt.len() {
        return Err(Error::DimensionMismatch("map and ground truth differ in length".into()));
    }
    validate_p2p(map, map.len(), target.num_vertices())?;
    validate_p2p(gt, gt.len(), target.num_vertices())?;
    if map.is_empty() {
        return Ok(0.0);
    }
    let adj = edge_graph(target, 1.0 / target.total_area().sqrt());
    // One search per distinct ground-truth image, in index order.
    let mut by_source: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in gt.iter().enumerate() {
        if map[i] != g {
            by_source.entry(g).or_default().push(map[i]);
        }
    }
    let mut total = 0.0;
    for (g, images) in by_source {
        let d = dijkstra(&adj, g);
        for j in images {
            if !d[j].is_finite() {
                return Err(Error::Disconnected {
                    components: target.connected_components(),
                });
            }
            total += d[j];
        }
    }
    Ok(100.0 * total / map.len() as f64)
}

/// Percentage of target vertices `j` for which the unit vertex normals of the
/// mapped mesh `{Π V₂, F₁}`, summed over the preimages of `j`, point against
/// the target normal at `j`.
pub fn inversion_rate(map: &[usize], source: &TriMesh, target: &TriMesh) -> Result<f64> {
    validate_p2p(map, source.num_vertices(), target.num_vertices())?;
    let mapped: Vec<Vector3<f64>> = map.iter().map(|&j| target.vertices()[j]).collect();
    let degenerate = source
        .faces()
        .iter()
        .filter(|f| {
            (mapped[f[1]] - mapped[f[0]])
                .cross(&(mapped[f[2]] - mapped[f[0]]))
                .norm()
                == 0.0
        })
        .count();
    if degenerate > 0 {
        log::debug!("inversion: {degenerate} mapped faces are degenerate and skipped");
    }
    let n1 = vertex_normals(&mapped, source.faces());
    let n2 = vertex_normals(target.vertices(), target.faces());
    let mut acc = vec![0.0; target.num_vertices()];
    for (i, &j) in map.iter().enumerate() {
        acc[j] += n1[i].dot(&n2[j]);
    }
    let inverted = acc.iter().filter(|&&s| s < 0.0).count();
    Ok(100.0 * inverted as f64 / target.num_vertices() as f64)
}

/// `tr((Π V₂)ᵀ Δ₁ (Π V₂))` with `V₂` scaled to unit area.
pub fn dirichlet_energy(map: &[usize], source_ops: &DifferentialOperators, target: &TriMesh) -> Result<f64> {
    validate_p2p(map, source_ops.num_vertices(), target.num_vertices())?;
    let s = 1.0 / target.total_area().sqrt();
    let pulled = faer::Mat::from_fn(map.len(), 3, |i, c| target.vertices()[map[i]][c] * s);
    let lp = source_ops.laplacian().mul_dense(pulled.as_ref());
    let mut e = 0.0;
    for c in 0..3 {
        for i in 0..map.len() {
            e += pulled[(i, c)] * lp[(i, c)];
        }
    }
    Ok(e.max(0.0))
}

/// `100 × Σ_{j ∈ image} M₂[j] / Σ M₂`.
pub fn coverage(map: &[usize], target_mass: &[f64]) -> Result<f64> {
    validate_p2p(map, map.len(), target_mass.len())?;
    let mut hit = vec![false; target_mass.len()];
    for &j in map {
        hit[j] = true;
    }
    let total: f64 = target_mass.iter().sum();
    let covered: f64 = target_mass.iter().zip(&hit).filter(|(_, &h)| h).map(|(m, _)| m).sum();
    Ok(100.0 * covered / total)
}

/// Symmetric Dirichlet energy of a Jacobian field over its source mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricDirichlet {
    /// Area-weighted mean over invertible faces, times the normalization.
    pub mean: f64,
    pub per_face: Vec<f64>,
    /// Faces whose tangential block is singular; excluded from the mean.
    pub singular_faces: Vec<usize>,
}

/// Tangential 2×2 block of `J`: the source face plane, in an orthonormal
/// basis, mapped into an orthonormal basis of its image.
pub fn tangential_block(j: &Matrix3<f64>, e1: &Vector3<f64>, e2: &Vector3<f64>) -> Option<Matrix2<f64>> {
    let b1 = e1.try_normalize(0.0)?;
    let b2 = (e2 - b1 * b1.dot(e2)).try_normalize(0.0)?;
    // Row-vector convention: a tangent vector t maps to tᵀJ.
    let t1 = (b1.transpose() * j).transpose();
    let t2 = (b2.transpose() * j).transpose();
    let c1 = t1.try_normalize(1e-300).unwrap_or_else(Vector3::x);
    let c2 = match (t2 - c1 * c1.dot(&t2)).try_normalize(1e-300) {
        Some(c) => c,
        None => {
            let n = c1.cross(&if c1.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() });
            n.normalize().cross(&c1)
        }
    };
    Some(Matrix2::new(t1.dot(&c1), t1.dot(&c2), t2.dot(&c1), t2.dot(&c2)))
}

/// Area-weighted `‖A‖²_F + ‖A⁻¹‖²_F` of the tangential blocks, times
/// `normalization`. The identity gives 4.
pub fn symmetric_dirichlet(field: &JacobianField, source: &TriMesh, normalization: f64) -> Result<SymmetricDirichlet> {
    if field.len() != source.num_faces() {
        return Err(Error::DimensionMismatch(format!(
            "{} Jacobians for {} faces",
            field.len(),
            source.num_faces()
        )));
    }
    let v = source.vertices();
    let mut per_face = Vec::with_capacity(field.len());
    let mut singular = Vec::new();
    let (mut num, mut den) = (0.0, 0.0);
    for (f, t) in source.faces().iter().enumerate() {
        let e1 = v[t[1]] - v[t[0]];
        let e2 = v[t[2]] - v[t[0]];
        let area = 0.5 * e1.cross(&e2).norm();
        let energy = tangential_block(field.get(f), &e1, &e2)
            .filter(|a| a.determinant().abs() > 1e-12 * a.norm_squared().max(1e-300))
            .and_then(|a| a.try_inverse().map(|inv| a.norm_squared() + inv.norm_squared()));
        match energy {
            Some(e) if e.is_finite() => {
                per_face.push(e * normalization);
                num += area * e;
                den += area;
            }
            _ => {
                per_face.push(f64::NAN);
                singular.push(f);
            }
        }
    }
    Ok(SymmetricDirichlet {
        mean: if den > 0.0 { normalization * num / den } else { f64::NAN },
        per_face,
        singular_faces: singular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::jacobian_between;
    use crate::frames::FaceFrames;
    use crate::shapes;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn identity_lattice() {
        let m = shapes::creature(&shapes::CreatureParams::default());
        let n = m.num_vertices();
        let r = evaluate_map(&m, &m, &identity(n), Some(&identity(n))).unwrap();
        assert_eq!(r.geodesic_error, Some(0.0));
        assert_eq!(r.inversion, 0.0);
        assert!((r.coverage - 100.0).abs() < 1e-10);
        let ops = DifferentialOperators::new(&m).unwrap();
        assert!(dirichlet_energy(&vec![7; n], &ops, &m).unwrap().abs() < 1e-14);
    }

    #[test]
    fn single_wrong_vertex_costs_one_edge() {
        let m = shapes::icosphere(2).unit_area();
        let n = m.num_vertices();
        let mut map = identity(n);
        let [a, b, _] = m.faces()[0];
        map[a] = b;
        let edge = (m.vertices()[a] - m.vertices()[b]).norm();
        let err = geodesic_error(&map, &identity(n), &m).unwrap();
        assert!((err - 100.0 * edge / n as f64).abs() < 1e-12);
    }

    #[test]
    fn swap_costs_two_paths() {
        let m = shapes::jittered_grid(8, 7, 0.3, 2);
        let n = m.num_vertices();
        let mut map = identity(n);
        let (i, j) = (3, 40);
        map.swap(i, j);
        let d = graph_distances(&m, i);
        let err = geodesic_error(&map, &identity(n), &m).unwrap();
        // Brute-force oracle: relax all edges until nothing changes.
        let s = 1.0 / m.total_area().sqrt();
        let mut dist = vec![f64::INFINITY; n];
        dist[i] = 0.0;
        loop {
            let mut changed = false;
            for f in m.faces() {
                for k in 0..3 {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    let w = (m.vertices()[a] - m.vertices()[b]).norm() * s;
                    for (x, y) in [(a, b), (b, a)] {
                        if dist[x] + w < dist[y] - 1e-15 {
                            dist[y] = dist[x] + w;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        assert!((d[j] - dist[j]).abs() < 1e-12);
        assert!((err - 100.0 * 2.0 * dist[j] / n as f64).abs() < 1e-10);
    }

    #[test]
    fn reflection_inverts_everything() {
        let m = shapes::icosphere(2);
        let n = m.num_vertices();
        // Map each vertex to its mirror image through the z = 0 plane.
        let map: Vec<usize> = m
            .vertices()
            .iter()
            .map(|p| {
                let q = Vector3::new(p.x, p.y, -p.z);
                (0..n)
                    .min_by(|&a, &b| (m.vertices()[a] - q).norm().total_cmp(&(m.vertices()[b] - q).norm()))
                    .unwrap()
            })
            .collect();
        let inv = inversion_rate(&map, &m, &m).unwrap();
        assert!(inv > 95.0, "{inv}");
        // Direct check: mapped mesh normals are mirrored.
        let mapped: Vec<_> = map.iter().map(|&j| m.vertices()[j]).collect();
        let n1 = vertex_normals(&mapped, m.faces());
        let n2 = vertex_normals(m.vertices(), m.faces());
        let flipped = (0..n).filter(|&i| n1[i].dot(&n2[map[i]]) < 0.0).count();
        assert!(flipped as f64 > 0.95 * n as f64);
    }

    #[test]
    fn corruption_gives_partial_inversion() {
        let m = shapes::icosphere(3);
        let n = m.num_vertices();
        let mut map = identity(n);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut idx = identity(n);
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(n / 20) {
            map[i] = rng.random_range(0..n);
        }
        let inv = inversion_rate(&map, &m, &m).unwrap();
        assert!(inv > 0.0 && inv < 100.0, "{inv}");
    }

    #[test]
    fn dirichlet_matches_quadratic_form() {
        let m = shapes::creature(&shapes::CreatureParams::default());
        let ops = DifferentialOperators::new(&m).unwrap();
        let n = m.num_vertices();
        let e = dirichlet_energy(&identity(n), &ops, &m).unwrap();
        // Independent evaluation: ½ Σ_edges w_ij |x_i − x_j|² from cotangents.
        let u = m.unit_area();
        let v = u.vertices();
        let mut direct = 0.0;
        for f in m.faces() {
            for k in 0..3 {
                let (i, j, o) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                let (a, b) = (v[i] - v[o], v[j] - v[o]);
                let cot = a.dot(&b) / a.cross(&b).norm();
                direct += 0.5 * cot * (v[i] - v[j]).norm_squared();
            }
        }
        assert!((e - direct).abs() < 1e-9 * direct);
        let moved = m
            .with_vertices(m.vertices().iter().map(|p| p + Vector3::new(3.0, -1.0, 2.0)).collect())
            .unwrap();
        assert!((dirichlet_energy(&identity(n), &ops, &moved).unwrap() - e).abs() < 1e-9 * e);
    }

    #[test]
    fn coverage_cases() {
        let m = shapes::jittered_grid(10, 10, 0.0, 0);
        let ops = DifferentialOperators::new(&m).unwrap();
        let n = m.num_vertices();
        let mass = ops.mass();
        assert!((coverage(&identity(n), mass).unwrap() - 100.0).abs() < 1e-10);
        let total: f64 = mass.iter().sum();
        let c = coverage(&vec![5; n], mass).unwrap();
        assert!((c - 100.0 * mass[5] / total).abs() < 1e-12);
        let half: Vec<usize> = (0..n).map(|i| i - i % 2).collect();
        let want: f64 = (0..n).step_by(2).map(|i| mass[i]).sum::<f64>() / total * 100.0;
        let c = coverage(&half, mass).unwrap();
        assert!((c - want).abs() < 1e-12);
        assert!((c - 50.0).abs() < 5.0);
    }

    #[test]
    fn metrics_are_scale_invariant() {
        let a = shapes::creature(&shapes::CreatureParams::default());
        let b = shapes::pose(&a, 4.0, &shapes::Pose::random(2, 0.5));
        let n = a.num_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map: Vec<usize> = (0..n).map(|i| if i % 7 == 0 { rng.random_range(0..n) } else { i }).collect();
        let r1 = evaluate_map(&a, &b, &map, Some(&identity(n))).unwrap();
        let r2 = evaluate_map(&a.scaled(3.7).unwrap(), &b.scaled(3.7).unwrap(), &map, Some(&identity(n))).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-8 * x.abs().max(1.0);
        assert!(close(r1.geodesic_error.unwrap(), r2.geodesic_error.unwrap()));
        assert!(close(r1.inversion, r2.inversion));
        assert!(close(r1.dirichlet, r2.dirichlet));
        assert!(close(r1.coverage, r2.coverage));
        assert!(!r1.to_json_line().contains('\n'));
    }

    #[test]
    fn symmetric_dirichlet_cases() {
        let m = shapes::jittered_grid(4, 4, 0.2, 1);
        let id = JacobianField::identity(m.num_faces());
        let sd = symmetric_dirichlet(&id, &m, 1.0).unwrap();
        assert!((sd.mean - 4.0).abs() < 1e-12);
        assert!(sd.singular_faces.is_empty());

        let r = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), 0.7).into_inner();
        let rot = JacobianField::new(vec![r; m.num_faces()]);
        assert!((symmetric_dirichlet(&rot, &m, 1.0).unwrap().mean - 4.0).abs() < 1e-12);

        // In-plane scale of a single triangle, built geometrically.
        let s = 1.7;
        let tri = TriMesh::new(
            vec![Vector3::zeros(), Vector3::new(1.0, 0.2, 0.0), Vector3::new(0.3, 0.9, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let big = tri.scaled(s).unwrap();
        let j = jacobian_between(&FaceFrames::new(&tri).unwrap(), &FaceFrames::new(&big).unwrap()).unwrap();
        let want = 2.0 * s * s + 2.0 / (s * s);
        assert!((symmetric_dirichlet(&j, &tri, 1.0).unwrap().mean - want).abs() < 1e-10);
        assert!((symmetric_dirichlet(&j, &tri, 0.01).unwrap().mean - 0.01 * want).abs() < 1e-12);

        let zero = JacobianField::new(vec![Matrix3::zeros(); m.num_faces()]);
        let sd = symmetric_dirichlet(&zero, &m, 1.0).unwrap();
        assert_eq!(sd.singular_faces.len(), m.num_faces());
    }
}
