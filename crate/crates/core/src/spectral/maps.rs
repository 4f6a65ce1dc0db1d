//! Functional maps, pointwise maps, and conversions between them.
//!
//! `C₂₁` is `k₁ × k₂` and transports coefficients of functions on shape 2 to
//! shape 1: for a hard map `Π₁₂` (row `i` selects target vertex `π(i)`),
//! `C₂₁ = Ψ₁ᵀ M₁ Π₁₂ Ψ₂`.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};

use super::SpectralBasis;
use crate::error::{Error, Result};
use crate::nn;

/// Default softmax temperature for soft maps.
pub const DEFAULT_TAU: f64 = 0.07;

/// Checks a hard map against the source and target vertex counts.
pub fn validate_p2p(map: &[usize], n1: usize, n2: usize) -> Result<()> {
    if map.len() != n1 {
        return Err(Error::DimensionMismatch(format!(
            "map has {} entries for {n1} source vertices",
            map.len()
        )));
    }
    if let Some((i, &j)) = map.iter().enumerate().find(|(_, &j)| j >= n2) {
        return Err(Error::InvalidArgument(format!(
            "map entry {i} points at vertex {j}, target has {n2}"
        )));
    }
    Ok(())
}

/// Rows of `x` gathered by a hard map: `(Π x)_i = x_{π(i)}`.
pub fn gather_rows(map: &[usize], x: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(map.len(), x.ncols(), |i, j| x[(map[i], j)])
}

/// `C₂₁ = Ψ₁ᵀ M₁ Π₁₂ Ψ₂`.
pub fn fmap_from_p2p(map: &[usize], b1: &SpectralBasis, b2: &SpectralBasis) -> Result<Mat<f64>> {
    validate_p2p(map, b1.num_vertices(), b2.num_vertices())?;
    let pulled = gather_rows(map, b2.evecs());
    b1.analyze(pulled.as_ref())
}

/// Hard map from a functional map: source vertex `i` goes to the target
/// vertex whose spectral embedding row `(Ψ₂)_j` is nearest to `(Ψ₁ C₂₁)_i`.
pub fn p2p_from_fmap(c: MatRef<'_, f64>, b1: &SpectralBasis, b2: &SpectralBasis) -> Result<Vec<usize>> {
    let (k1, k2) = check_fmap_shape(c, b1, b2)?;
    if c.col_iter().any(|col| col.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite {
            term: "functional map".into(),
        });
    }
    let mut query = Mat::zeros(b1.num_vertices(), k2);
    matmul(query.as_mut(), Accum::Replace, b1.columns(k1), c, 1.0, Par::Seq);
    Ok(nn::nearest(b2.columns(k2), query.as_ref()))
}

/// Coarse target geometry on source connectivity: `Ψ₁ C₂₁ Ψ₂ᵀ M₂ V₂`.
pub fn pullback(
    c: MatRef<'_, f64>,
    b1: &SpectralBasis,
    b2: &SpectralBasis,
    v2: MatRef<'_, f64>,
) -> Result<Mat<f64>> {
    let (k1, k2) = check_fmap_shape(c, b1, b2)?;
    let coeffs2 = b2.analyze_k(v2, k2)?;
    let mut coeffs1 = Mat::zeros(k1, v2.ncols());
    matmul(coeffs1.as_mut(), Accum::Replace, c, coeffs2.as_ref(), 1.0, Par::Seq);
    let mut out = Mat::zeros(b1.num_vertices(), v2.ncols());
    matmul(out.as_mut(), Accum::Replace, b1.columns(k1), coeffs1.as_ref(), 1.0, Par::Seq);
    Ok(out)
}

fn check_fmap_shape(c: MatRef<'_, f64>, b1: &SpectralBasis, b2: &SpectralBasis) -> Result<(usize, usize)> {
    if c.nrows() > b1.k() || c.ncols() > b2.k() {
        return Err(Error::DimensionMismatch(format!(
            "functional map is {}x{}, bases have {} and {} functions",
            c.nrows(),
            c.ncols(),
            b1.k(),
            b2.k()
        )));
    }
    Ok((c.nrows(), c.ncols()))
}

/// Row-stochastic soft map `softmax(F₁F₂ᵀ / τ)` (row-wise).
pub fn soft_map(f1: MatRef<'_, f64>, f2: MatRef<'_, f64>, tau: f64) -> Result<Mat<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if f1.ncols() != f2.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "feature widths differ: {} vs {}",
            f1.ncols(),
            f2.ncols()
        )));
    }
    let mut p = Mat::zeros(f1.nrows(), f2.nrows());
    matmul(p.as_mut(), Accum::Replace, f1, f2.transpose(), 1.0 / tau, Par::Seq);
    softmax_rows(&mut p);
    Ok(p)
}

/// In-place numerically stable row softmax.
pub fn softmax_rows(p: &mut Mat<f64>) {
    for i in 0..p.nrows() {
        let mut max = f64::NEG_INFINITY;
        for j in 0..p.ncols() {
            max = max.max(p[(i, j)]);
        }
        let mut sum = 0.0;
        for j in 0..p.ncols() {
            let e = (p[(i, j)] - max).exp();
            p[(i, j)] = e;
            sum += e;
        }
        for j in 0..p.ncols() {
            p[(i, j)] /= sum;
        }
    }
}

/// `Ĉ₂₁ = Ψ₁ᵀ M₁ Π̃ Ψ₂` for a dense soft map, truncated to `(k1, k2)`.
pub fn fmap_from_soft(
    soft: MatRef<'_, f64>,
    b1: &SpectralBasis,
    b2: &SpectralBasis,
    k1: usize,
    k2: usize,
) -> Result<Mat<f64>> {
    if soft.nrows() != b1.num_vertices() || soft.ncols() != b2.num_vertices() {
        return Err(Error::DimensionMismatch("soft map does not match the bases".into()));
    }
    let mut pulled = Mat::zeros(soft.nrows(), k2);
    matmul(pulled.as_mut(), Accum::Replace, soft, b2.columns(k2), 1.0, Par::Seq);
    b1.analyze_k(pulled.as_ref(), k1)
}

/// Soft map and its functional map in one call.
pub fn soft_map_and_fmap(
    f1: MatRef<'_, f64>,
    f2: MatRef<'_, f64>,
    tau: f64,
    b1: &SpectralBasis,
    b2: &SpectralBasis,
) -> Result<(Mat<f64>, Mat<f64>)> {
    let p = soft_map(f1, f2, tau)?;
    let c = fmap_from_soft(p.as_ref(), b1, b2, b1.k(), b2.k())?;
    Ok((p, c))
}

/// Row-wise argmax of a soft map (lowest index on ties).
pub fn argmax_rows(p: MatRef<'_, f64>) -> Vec<usize> {
    (0..p.nrows())
        .map(|i| {
            let mut best = 0;
            for j in 1..p.ncols() {
                if p[(i, j)] > p[(i, best)] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::DifferentialOperators;
    use crate::shapes;
    use crate::TriMesh;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis(mesh: &TriMesh, k: usize) -> SpectralBasis {
        SpectralBasis::compute(&DifferentialOperators::new(mesh).unwrap(), k).unwrap()
    }

    /// Relabels vertices: new vertex `i` is old vertex `perm[i]`.
    fn permuted(mesh: &TriMesh, perm: &[usize]) -> TriMesh {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        TriMesh::new(
            perm.iter().map(|&o| mesh.vertices()[o]).collect(),
            mesh.faces().iter().map(|f| [inv[f[0]], inv[f[1]], inv[f[2]]]).collect(),
        )
        .unwrap()
    }

    fn small_mesh() -> TriMesh {
        // 50 vertices, generic (no symmetric eigenspaces).
        shapes::jittered_grid(10, 5, 0.5, 9)
    }

    #[test]
    fn identity_fmap_is_identity() {
        let mesh = shapes::icosphere(2);
        let b = basis(&mesh, 30);
        let id: Vec<usize> = (0..mesh.num_vertices()).collect();
        let c = fmap_from_p2p(&id, &b, &b).unwrap();
        assert!((c - Mat::<f64>::identity(30, 30)).norm_max() < 1e-8);
    }

    #[test]
    fn permuted_copy_gives_orthogonal_fmap() {
        let mesh = shapes::creature(&shapes::CreatureParams {
            around: 12,
            along: 12,
            ..Default::default()
        });
        let n = mesh.num_vertices();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let other = permuted(&mesh, &perm);
        let b1 = basis(&mesh, 20);
        let b2 = basis(&other, 20);
        // Source vertex i sits at position inv[i] in the permuted copy.
        let mut map = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            map[old] = new;
        }
        let c = fmap_from_p2p(&map, &b1, &b2).unwrap();
        let ctc = c.transpose() * &c;
        assert!((ctc - Mat::<f64>::identity(20, 20)).norm_l2() < 1e-6);
        assert!((c[(0, 0)] - 1.0).abs() < 1e-10);
        for j in 1..20 {
            assert!(c[(0, j)].abs() < 1e-10 && c[(j, 0)].abs() < 1e-10);
        }
    }

    #[test]
    fn full_basis_roundtrip_recovers_permutation() {
        let mesh = small_mesh();
        let n = mesh.num_vertices();
        assert_eq!(n, 50);
        let b = basis(&mesh, n);
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
        let c = fmap_from_p2p(&map, &b, &b).unwrap();
        assert_eq!(p2p_from_fmap(c.as_ref(), &b, &b).unwrap(), map);
        let id: Vec<usize> = (0..n).collect();
        let c = Mat::<f64>::identity(n, n);
        assert_eq!(p2p_from_fmap(c.as_ref(), &b, &b).unwrap(), id);
    }

    #[test]
    fn truncated_roundtrip_mostly_recovers_identity() {
        let mesh = small_mesh();
        let n = mesh.num_vertices();
        let b = basis(&mesh, 10);
        let id: Vec<usize> = (0..n).collect();
        let c = fmap_from_p2p(&id, &b, &b).unwrap();
        let back = p2p_from_fmap(c.as_ref(), &b, &b).unwrap();
        let hits = back.iter().zip(&id).filter(|(a, b)| a == b).count();
        assert!(hits as f64 >= 0.9 * n as f64, "{hits}/{n}");
    }

    #[test]
    fn argmin_invariant_to_common_scaling() {
        let mesh = small_mesh();
        let b = basis(&mesh, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Mat::from_fn(12, 12, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let m1 = p2p_from_fmap(c.as_ref(), &b, &b).unwrap();
        let q = b.evecs() * &c;
        let scaled_q = Mat::from_fn(q.nrows(), q.ncols(), |i, j| 2.5 * q[(i, j)]);
        let scaled_p = Mat::from_fn(b.evecs().nrows(), 12, |i, j| 2.5 * b.evecs()[(i, j)]);
        assert_eq!(nn::nearest(scaled_p.as_ref(), scaled_q.as_ref()), m1);
    }

    #[test]
    fn pullback_cases() {
        let mesh = small_mesh();
        let n = mesh.num_vertices();
        let v = mesh.vertex_matrix();
        let full = basis(&mesh, n);
        let c = Mat::<f64>::identity(n, n);
        let pb = pullback(c.as_ref(), &full, &full, v.as_ref()).unwrap();
        assert!((&pb - &v).norm_max() < 1e-8);

        let creature = shapes::creature(&shapes::CreatureParams::default());
        let b = basis(&creature, 40);
        let v = creature.vertex_matrix();
        let c = Mat::<f64>::identity(40, 40);
        let pb = pullback(c.as_ref(), &b, &b, v.as_ref()).unwrap();
        assert!((pb - b.project(v.as_ref()).unwrap()).norm_max() < 1e-10);
    }

    #[test]
    fn pullback_commutes_with_permutation() {
        let mesh = shapes::creature(&shapes::CreatureParams {
            around: 12,
            along: 12,
            ..Default::default()
        });
        let n = mesh.num_vertices();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(8));
        let other = permuted(&mesh, &perm);
        let mut map = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            map[old] = new;
        }
        let b1 = basis(&mesh, 20);
        let b2 = basis(&other, 20);
        let c = fmap_from_p2p(&map, &b1, &b2).unwrap();
        let v2 = other.vertex_matrix();
        let pb = pullback(c.as_ref(), &b1, &b2, v2.as_ref()).unwrap();
        let direct = b1.project(gather_rows(&map, v2.as_ref()).as_ref()).unwrap();
        assert!((pb - direct).norm_max() < 1e-6);
    }

    #[test]
    fn soft_map_cases() {
        let f = Mat::from_fn(5, 3, |_, j| j as f64);
        let p = soft_map(f.as_ref(), f.subrows(0, 4), DEFAULT_TAU).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                assert!((p[(i, j)] - 0.25).abs() < 1e-15);
            }
        }
        // Well separated unit features and a tiny temperature give one-hot rows.
        let f1 = Mat::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let f2 = Mat::from_fn(4, 4, |i, j| if (i + 1) % 4 == j { 1.0 } else { 0.0 });
        let p = soft_map(f1.as_ref(), f2.as_ref(), 1e-6).unwrap();
        let hard = argmax_rows(p.as_ref());
        for i in 0..4 {
            for j in 0..4 {
                let want = if hard[i] == j { 1.0 } else { 0.0 };
                assert!((p[(i, j)] - want).abs() < 1e-6);
            }
            assert_eq!(hard[i], (i + 3) % 4);
        }
        assert!(soft_map(f1.as_ref(), f2.as_ref(), 0.0).is_err());
        assert!(soft_map(f1.as_ref(), f.as_ref(), 1.0).is_err());
        assert_eq!(DEFAULT_TAU, 0.07);
    }

    #[test]
    fn soft_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f1 = Mat::from_fn(30, 8, |_, _| rand::Rng::random_range(&mut rng, -3.0..3.0));
        let f2 = Mat::from_fn(20, 8, |_, _| rand::Rng::random_range(&mut rng, -3.0..3.0));
        let p = soft_map(f1.as_ref(), f2.as_ref(), 0.05).unwrap();
        for i in 0..30 {
            let s: f64 = (0..20).map(|j| p[(i, j)]).sum();
            assert!((s - 1.0).abs() < 1e-8);
            assert!((0..20).all(|j| p[(i, j)] >= 0.0));
        }
    }

    #[test]
    fn map_validation() {
        let mesh = small_mesh();
        let b = basis(&mesh, 5);
        assert!(fmap_from_p2p(&[0; 3], &b, &b).is_err());
        assert!(fmap_from_p2p(&[50; 50], &b, &b).is_err());
        let c = Mat::<f64>::zeros(6, 5);
        assert!(p2p_from_fmap(c.as_ref(), &b, &b).is_err());
    }
}
