//! Per-face Jacobian fields and their integration back to vertex positions.

pub(crate) mod poisson;
mod polar;
mod recovery;

pub use poisson::{poisson_solve, PoissonSolver};
pub use polar::{polar_decompose, polar_rotations};
pub use recovery::{recover_embedding, RecoveryCache, RecoverySettings, RecoverySolver};

use std::io::{Read, Write};

use faer::{Mat, MatRef};
use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::frames::FaceFrames;
use crate::nn;

/// One 3×3 matrix per face, in row-vector convention (`E₂ = E₁ J`).
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    mats: Vec<Matrix3<f64>>,
    vertex_averaged: bool,
}

impl JacobianField {
    pub fn new(mats: Vec<Matrix3<f64>>) -> Self {
        Self {
            mats,
            vertex_averaged: false,
        }
    }

    pub fn identity(num_faces: usize) -> Self {
        Self::new(vec![Matrix3::identity(); num_faces])
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn get(&self, f: usize) -> &Matrix3<f64> {
        &self.mats[f]
    }

    pub fn as_slice(&self) -> &[Matrix3<f64>] {
        &self.mats
    }

    pub fn into_inner(self) -> Vec<Matrix3<f64>> {
        self.mats
    }

    /// Whether the field was produced by averaging vertex quantities.
    pub fn is_vertex_averaged(&self) -> bool {
        self.vertex_averaged
    }

    pub fn with_vertex_averaged(mut self, flag: bool) -> Self {
        self.vertex_averaged = flag;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.mats.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// `3|F| × 3` matrix; row `3f + r` is row `r` of face `f`'s Jacobian.
    pub fn to_stacked(&self) -> Mat<f64> {
        Mat::from_fn(3 * self.mats.len(), 3, |r, c| self.mats[r / 3][(r % 3, c)])
    }

    pub fn from_stacked(m: MatRef<'_, f64>) -> Result<Self> {
        if m.ncols() != 3 || m.nrows() % 3 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "stacked Jacobians must be 3|F| x 3, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::new(
            (0..m.nrows() / 3)
                .map(|f| Matrix3::from_fn(|r, c| m[(3 * f + r, c)]))
                .collect(),
        ))
    }

    /// Binary blob: `|F|` as u64 LE, then 9 f64 LE per face, row-major.
    pub fn write_blob(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&(self.mats.len() as u64).to_le_bytes())?;
        for m in &self.mats {
            for r in 0..3 {
                for c in 0..3 {
                    w.write_all(&m[(r, c)].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_blob(mut r: impl Read) -> Result<Self> {
        let bad = || Error::Checkpoint("truncated Jacobian blob".into());
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| bad())?;
        let nf = u64::from_le_bytes(b) as usize;
        let mut mats = Vec::with_capacity(nf.min(1 << 24));
        for _ in 0..nf {
            let mut m = Matrix3::zeros();
            for row in 0..3 {
                for col in 0..3 {
                    r.read_exact(&mut b).map_err(|_| bad())?;
                    m[(row, col)] = f64::from_le_bytes(b);
                }
            }
            mats.push(m);
        }
        Ok(Self::new(mats))
    }
}

/// `J_f = E₁_f⁻¹ E₂_f` for every face.
pub fn jacobian_between(source: &FaceFrames, target: &FaceFrames) -> Result<JacobianField> {
    if source.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "frame counts differ: {} vs {}",
            source.len(),
            target.len()
        )));
    }
    let mut mats = Vec::with_capacity(source.len());
    for f in 0..source.len() {
        let e1 = source.get(f);
        let inv = invert_frame(e1).ok_or(Error::SingularFrame { face: f })?;
        mats.push(inv * target.get(f));
    }
    Ok(JacobianField::new(mats))
}

/// Inverse of a face frame, or `None` when `|det E|` is below `1e-12` of
/// the edge-length scale.
pub(crate) fn invert_frame(e: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let scale = e.row(0).norm() * e.row(1).norm();
    let det = e.determinant();
    if !(det.abs() > 1e-12 * scale) {
        return None;
    }
    e.try_inverse()
}

pub fn jacobian_determinants(field: &JacobianField) -> Vec<f64> {
    field.mats.iter().map(|m| m.determinant()).collect()
}

/// Refined hard map: nearest target vertex for every recovered source vertex.
pub fn refine_p2p(v_hat: MatRef<'_, f64>, v2: MatRef<'_, f64>) -> Result<Vec<usize>> {
    if v2.nrows() == 0 {
        return Err(Error::InvalidArgument("empty target point set".into()));
    }
    if v_hat.ncols() != v2.ncols() {
        return Err(Error::DimensionMismatch("point dimensions differ".into()));
    }
    let finite = |m: MatRef<'_, f64>| m.col_iter().all(|c| c.iter().all(|v| v.is_finite()));
    if !finite(v_hat) || !finite(v2) {
        return Err(Error::NonFinite {
            term: "refinement positions".into(),
        });
    }
    Ok(nn::nearest(v2, v_hat))
}
