//! Per-face frames `E = [e₁; e₂; N]` (rows), with `e₁ = v₁ - v₀`,
//! `e₂ = v₂ - v₀` and `N` the unit face normal.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

#[derive(Debug, Clone, PartialEq)]
pub struct FaceFrames {
    frames: Vec<Matrix3<f64>>,
}

impl FaceFrames {
    /// Frames of a validated mesh.
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        let frames = frames_of(mesh.vertices(), mesh.faces());
        for (f, e) in frames.iter().enumerate() {
            if e.row(2).norm() == 0.0 || e.determinant().abs() == 0.0 {
                return Err(Error::SingularFrame { face: f });
            }
        }
        Ok(Self { frames })
    }

    /// Frames of arbitrary positions on a fixed connectivity. Collapsed faces
    /// get a zero normal row instead of an error.
    pub fn from_positions(positions: &[Vector3<f64>], faces: &[[usize; 3]]) -> Self {
        Self {
            frames: frames_of(positions, faces),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, f: usize) -> &Matrix3<f64> {
        &self.frames[f]
    }

    pub fn as_slice(&self) -> &[Matrix3<f64>] {
        &self.frames
    }
}

/// Frame of one triangle.
pub fn frame(p0: &Vector3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>) -> Matrix3<f64> {
    let e1 = p1 - p0;
    let e2 = p2 - p0;
    let c = e1.cross(&e2);
    let len = c.norm();
    let n = if len > 0.0 { c / len } else { Vector3::zeros() };
    Matrix3::from_rows(&[e1.transpose(), e2.transpose(), n.transpose()])
}

fn frames_of(v: &[Vector3<f64>], faces: &[[usize; 3]]) -> Vec<Matrix3<f64>> {
    faces
        .iter()
        .map(|f| frame(&v[f[0]], &v[f[1]], &v[f[2]]))
        .collect()
}

/// Reverse-mode step through [`frame`]: given `∂L/∂E`, accumulates `∂L/∂p`
/// for the three corners.
pub(crate) fn frame_backward(
    p0: &Vector3<f64>,
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
    grad_frame: &Matrix3<f64>,
) -> [Vector3<f64>; 3] {
    let e1 = p1 - p0;
    let e2 = p2 - p0;
    let c = e1.cross(&e2);
    let len = c.norm();
    let mut g1: Vector3<f64> = grad_frame.row(0).transpose();
    let mut g2: Vector3<f64> = grad_frame.row(1).transpose();
    if len > 0.0 {
        let n = c / len;
        let gn: Vector3<f64> = grad_frame.row(2).transpose();
        let gc = (gn - n * n.dot(&gn)) / len;
        g1 += e2.cross(&gc);
        g2 += gc.cross(&e1);
    }
    [-(g1 + g2), g1, g2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn axis_aligned_triangle_frame_is_identity() {
        let m = TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let f = FaceFrames::new(&m).unwrap();
        assert_eq!(*f.get(0), Matrix3::identity());
    }

    #[test]
    fn rotation_acts_on_the_right() {
        let mesh = shapes::icosphere(1);
        let r = shapes::random_rotation(5);
        let rotated = mesh
            .with_vertices(mesh.vertices().iter().map(|v| r * v).collect())
            .unwrap();
        let a = FaceFrames::new(&mesh).unwrap();
        let b = FaceFrames::new(&rotated).unwrap();
        for f in 0..a.len() {
            let want = a.get(f) * r.transpose();
            assert!((b.get(f) - want).norm() < 1e-12);
        }
    }

    #[test]
    fn invariants_hold() {
        let mesh = shapes::creature(&shapes::CreatureParams::default());
        let frames = FaceFrames::new(&mesh).unwrap();
        for e in frames.as_slice() {
            assert!((e.row(2).norm() - 1.0).abs() < 1e-12);
            assert!(e.determinant().abs() > 0.0);
        }
    }

    #[test]
    fn coplanar_quad_has_equal_normals() {
        let m = TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(2.0, 0.0, 1.0),
                Vector3::new(2.0, 1.0, 1.0),
                Vector3::new(0.0, 1.0, 1.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let f = FaceFrames::new(&m).unwrap();
        assert_eq!(f.get(0).row(2), f.get(1).row(2));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = [
            Vector3::new(0.1, -0.2, 0.3),
            Vector3::new(1.2, 0.1, -0.1),
            Vector3::new(0.2, 0.9, 0.4),
        ];
        let weights = Matrix3::new(0.3, -1.0, 0.5, 0.7, 0.2, -0.4, 1.1, -0.6, 0.9);
        let loss = |q: &[Vector3<f64>; 3]| frame(&q[0], &q[1], &q[2]).component_mul(&weights).sum();
        let g = frame_backward(&p[0], &p[1], &p[2], &weights);
        let h = 1e-6;
        for c in 0..3 {
            for d in 0..3 {
                let mut qp = p;
                let mut qm = p;
                qp[c][d] += h;
                qm[c][d] -= h;
                let fd = (loss(&qp) - loss(&qm)) / (2.0 * h);
                assert!((fd - g[c][d]).abs() < 1e-8, "corner {c} axis {d}");
            }
        }
    }
}
