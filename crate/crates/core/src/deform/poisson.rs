use faer::{Mat, MatRef};

use super::JacobianField;
use crate::error::{Error, Result};
use crate::operators::DifferentialOperators;
use crate::sparse::{Cholesky, Csr};

/// Prefactored Poisson integrator `Δ V = ∇ᵀ A J`.
///
/// The translation nullspace is removed by pinning vertex 0 during
/// factorization; solutions are then recentred to zero mean, which is the
/// minimum-norm representative.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    chol: Cholesky,
    n: usize,
}

impl PoissonSolver {
    pub fn new(ops: &DifferentialOperators) -> Result<Self> {
        let components = ops.connected_components();
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        let n = ops.num_vertices();
        let chol = pinned_cholesky(ops.laplacian())?;
        Ok(Self { chol, n })
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    /// Integrates a Jacobian field to zero-mean vertex positions.
    pub fn solve(&self, ops: &DifferentialOperators, field: &JacobianField) -> Result<Mat<f64>> {
        if field.len() != ops.num_faces() {
            return Err(Error::DimensionMismatch(format!(
                "{} Jacobians for {} faces",
                field.len(),
                ops.num_faces()
            )));
        }
        if !field.is_finite() {
            return Err(Error::NonFinite {
                term: "Jacobian field".into(),
            });
        }
        let rhs = ops.divergence(field.to_stacked().as_ref());
        Ok(self.solve_rhs(rhs.as_ref()))
    }

    /// `C S b`: pinned solve `S` followed by mean removal `C`.
    pub fn solve_rhs(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        let mut x = pinned_solve(&self.chol, b);
        center(&mut x);
        x
    }

    /// Transpose of [`Self::solve_rhs`]: `S C g` (both factors are symmetric).
    pub fn adjoint(&self, g: MatRef<'_, f64>) -> Mat<f64> {
        let mut c = g.to_owned();
        center(&mut c);
        pinned_solve(&self.chol, c.as_ref())
    }
}

/// Convenience wrapper that factors and solves once.
pub fn poisson_solve(ops: &DifferentialOperators, field: &JacobianField) -> Result<Mat<f64>> {
    PoissonSolver::new(ops)?.solve(ops, field)
}

pub(crate) fn pinned_cholesky(a: &Csr) -> Result<Cholesky> {
    let rest: Vec<usize> = (1..a.nrows()).collect();
    Cholesky::new(&a.select(&rest, &rest))
}

/// Solves the system with row and column 0 removed; `x₀ = 0`.
pub(crate) fn pinned_solve(chol: &Cholesky, b: MatRef<'_, f64>) -> Mat<f64> {
    let n = b.nrows();
    let reduced = b.subrows(1, n - 1);
    let y = chol.solve(reduced);
    let mut x = Mat::zeros(n, b.ncols());
    x.subrows_mut(1, n - 1).copy_from(&y);
    x
}

pub(crate) fn center(x: &mut Mat<f64>) {
    let n = x.nrows() as f64;
    for c in 0..x.ncols() {
        let mean = x.col(c).iter().sum::<f64>() / n;
        for r in 0..x.nrows() {
            x[(r, c)] -= mean;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::jacobian_between;
    use crate::frames::FaceFrames;
    use crate::mesh::positions_to_mat;
    use crate::shapes::{self, CreatureParams, Pose};
    use crate::TriMesh;
    use nalgebra::Vector3;

    fn centered(m: &TriMesh) -> Mat<f64> {
        let mut v = m.vertex_matrix();
        center(&mut v);
        v
    }

    fn rel(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
        (a - b).norm_l2() / b.norm_l2()
    }

    #[test]
    fn identity_field_recovers_source() {
        let m = shapes::creature(&CreatureParams::default());
        let ops = DifferentialOperators::new(&m).unwrap();
        let v = poisson_solve(&ops, &JacobianField::identity(m.num_faces())).unwrap();
        assert!((&v - centered(&m)).norm_max() < 1e-8 * m.bbox_diagonal());
    }

    #[test]
    fn constant_rotation_recovers_rigid_motion() {
        let m = shapes::icosphere(3);
        let ops = DifferentialOperators::new(&m).unwrap();
        let r = shapes::random_rotation(4);
        let v = poisson_solve(&ops, &JacobianField::new(vec![r.transpose(); m.num_faces()])).unwrap();
        let rotated = m
            .with_vertices(m.vertices().iter().map(|p| r * p).collect())
            .unwrap();
        assert!((&v - centered(&rotated)).norm_max() < 1e-8);
    }

    #[test]
    fn roundtrip_from_posed_target() {
        let p = CreatureParams::default();
        let rest = shapes::creature(&p);
        let posed = shapes::pose(&rest, p.length, &Pose::random(2, 0.8));
        let ops = DifferentialOperators::new(&rest).unwrap();
        let j = jacobian_between(&FaceFrames::new(&rest).unwrap(), &FaceFrames::new(&posed).unwrap()).unwrap();
        let v = poisson_solve(&ops, &j).unwrap();
        assert!(rel(&v, &centered(&posed)) < 1e-6);
    }

    #[test]
    fn residual_and_adjoint() {
        let m = shapes::jittered_grid(9, 7, 0.4, 3);
        let ops = DifferentialOperators::new(&m).unwrap();
        let solver = PoissonSolver::new(&ops).unwrap();
        let mut j = JacobianField::identity(m.num_faces()).into_inner();
        for (f, a) in j.iter_mut().enumerate() {
            a[(0, 1)] = 0.1 * (f as f64).sin();
        }
        let field = JacobianField::new(j);
        let v = solver.solve(&ops, &field).unwrap();
        let rhs = ops.divergence(field.to_stacked().as_ref());
        let res = ops.laplacian().mul_dense(v.as_ref()) - &rhs;
        assert!(res.norm_l2() <= 1e-8 * rhs.norm_l2());

        // <C S b, g> = <b, S C g>
        let n = m.num_vertices();
        let b = Mat::from_fn(n, 2, |i, c| ((i * 7 + c * 3) % 11) as f64 - 5.0);
        let g = Mat::from_fn(n, 2, |i, c| ((i * 5 + c) % 13) as f64 * 0.1);
        let lhs = (solver.solve_rhs(b.as_ref()).transpose() * &g).diagonal().column_vector().sum();
        let rhs = (b.transpose() * solver.adjoint(g.as_ref())).diagonal().column_vector().sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn translation_of_source_does_not_matter() {
        let m = shapes::icosphere(2);
        let moved = m
            .with_vertices(m.vertices().iter().map(|p| p + Vector3::new(5.0, -1.0, 2.0)).collect())
            .unwrap();
        let field = JacobianField::identity(m.num_faces());
        let a = poisson_solve(&DifferentialOperators::new(&m).unwrap(), &field).unwrap();
        let b = poisson_solve(&DifferentialOperators::new(&moved).unwrap(), &field).unwrap();
        assert!((a - b).norm_max() < 1e-10);
    }

    #[test]
    fn disconnected_mesh_is_rejected() {
        let a = shapes::icosphere(0);
        let mut v = a.vertices().to_vec();
        v.extend(a.vertices().iter().map(|p| p + Vector3::new(3.0, 0.0, 0.0)));
        let mut f = a.faces().to_vec();
        f.extend(a.faces().iter().map(|t| [t[0] + 12, t[1] + 12, t[2] + 12]));
        let m = TriMesh::new(v, f).unwrap();
        let ops = DifferentialOperators::new(&m).unwrap();
        match PoissonSolver::new(&ops) {
            Err(Error::Disconnected { components }) => assert_eq!(components, 2),
            other => panic!("{other:?}"),
        }
        let _ = positions_to_mat(a.vertices());
    }
}
