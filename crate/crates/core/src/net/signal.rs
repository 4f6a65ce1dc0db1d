//! Coarse per-vertex input signals `Θ = I · J` (`|V| × 9`).

use faer::{Mat, MatRef};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::flatten;
use crate::deform::{invert_frame, polar_rotations, JacobianField};
use crate::error::{Error, Result};
use crate::frames::{frame, FaceFrames};
use crate::mesh::{mat_to_positions, TriMesh};
use crate::operators::DifferentialOperators;
use crate::spectral::{maps, SpectralBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    /// Jacobians to a spectrally projected (low-pass) target.
    #[default]
    Spectral,
    /// Polar rotations of a full-rank Jacobian field.
    Rotation,
}

/// Source frames and their inverses.
#[derive(Debug, Clone)]
pub struct SourceFrames {
    frames: FaceFrames,
    inverses: Vec<Matrix3<f64>>,
}

impl SourceFrames {
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        let frames = FaceFrames::new(mesh)?;
        let inverses = frames
            .as_slice()
            .iter()
            .enumerate()
            .map(|(f, e)| invert_frame(e).ok_or(Error::SingularFrame { face: f }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { frames, inverses })
    }

    pub fn frames(&self) -> &FaceFrames {
        &self.frames
    }

    pub fn inverse(&self, f: usize) -> &Matrix3<f64> {
        &self.inverses[f]
    }

    pub fn len(&self) -> usize {
        self.inverses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inverses.is_empty()
    }

    /// `E⁻¹ Ē` where `Ē` are frames of `positions` on the source faces.
    /// Collapsed target faces contribute a zero normal row.
    pub fn jacobians_to(&self, faces: &[[usize; 3]], positions: &[Vector3<f64>]) -> JacobianField {
        JacobianField::new(
            faces
                .iter()
                .enumerate()
                .map(|(f, t)| self.inverses[f] * frame(&positions[t[0]], &positions[t[1]], &positions[t[2]]))
                .collect(),
        )
    }
}

/// Face-to-vertex averaging of a Jacobian field, flattened row-major.
pub fn vertex_average(ops: &DifferentialOperators, field: &JacobianField) -> Mat<f64> {
    ops.face_to_vertex().mul_dense(flatten(field).as_ref())
}

/// Signal from coarse positions that share the source connectivity.
pub fn spectral_signal(
    ops: &DifferentialOperators,
    source: &SourceFrames,
    coarse: MatRef<'_, f64>,
) -> Result<Mat<f64>> {
    if coarse.nrows() != ops.num_vertices() || coarse.ncols() != 3 {
        return Err(Error::DimensionMismatch("coarse positions do not match the source".into()));
    }
    let positions = mat_to_positions(&coarse.to_owned());
    let field = source.jacobians_to(ops.faces(), &positions);
    Ok(vertex_average(ops, &field))
}

/// Training signal for a same-connectivity pair: the target projected onto
/// its own first `k` eigenfunctions.
pub fn training_signal(
    ops: &DifferentialOperators,
    source: &SourceFrames,
    target_basis: &SpectralBasis,
    target: MatRef<'_, f64>,
    k: usize,
) -> Result<Mat<f64>> {
    let coarse = target_basis.project_k(target, k)?;
    spectral_signal(ops, source, coarse.as_ref())
}

/// Inference signal across connectivities: the target pulled back through a
/// functional map `C₂₁`.
pub fn inference_signal(
    ops: &DifferentialOperators,
    source: &SourceFrames,
    b1: &SpectralBasis,
    b2: &SpectralBasis,
    c21: MatRef<'_, f64>,
    v2: MatRef<'_, f64>,
) -> Result<Mat<f64>> {
    let coarse = maps::pullback(c21, b1, b2, v2)?;
    spectral_signal(ops, source, coarse.as_ref())
}

/// Vertex-averaged polar rotations of a Jacobian field.
pub fn rotation_signal(ops: &DifferentialOperators, field: &JacobianField) -> Result<Mat<f64>> {
    let q = polar_rotations(field)?;
    Ok(vertex_average(ops, &JacobianField::new(q)))
}
