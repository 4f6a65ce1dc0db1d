//! Handle-based editing driven by a rotation-signal network.
//!
//! An edit prescribes rigid motions of handle vertices. The handle
//! displacement is first propagated to a provisional embedding, whose
//! per-face polar rotations form the network input. The predicted Jacobians
//! are then integrated with the handle positions imposed.

use faer::Mat;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::deform::{polar_rotations, JacobianField};
use crate::error::{Error, Result};
use crate::mesh::{mat_to_positions, TriMesh};
use crate::metrics::{symmetric_dirichlet, SymmetricDirichlet};
use crate::net::signal::{vertex_average, SourceFrames};
use crate::net::{unflatten, Ljn};
use crate::operators::DifferentialOperators;
use crate::sparse::{Cholesky, Csr};
use crate::spectral::SpectralBasis;

/// How handle displacements reach the free vertices before the network runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// Minimizes `‖Δ D‖²` over free displacements (smooth, curvature-continuous).
    #[default]
    BiLaplacian,
    /// Minimizes `‖∇ D‖²` (harmonic).
    Laplacian,
}

/// How handle positions enter the final integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HandleMode {
    /// Handle rows are eliminated and their positions imposed exactly.
    #[default]
    Hard,
    /// Handle rows are pulled to their targets with weight `alpha4`.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    pub propagation: Propagation,
    pub handles: HandleMode,
    /// Handle weight in soft mode.
    pub alpha4: f64,
    /// Jacobian-fidelity weight in soft mode.
    pub alpha5: f64,
    /// Scale applied to reported symmetric Dirichlet energies.
    pub energy_scale: f64,
    /// Tolerance on `‖RᵀR − I‖` and `det R − 1` for handle transforms.
    pub rigid_tolerance: f64,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            propagation: Propagation::BiLaplacian,
            handles: HandleMode::Hard,
            alpha4: 20000.0,
            alpha5: 150000.0,
            energy_scale: 1.0,
            rigid_tolerance: 1e-6,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.alpha4) || !pos(self.alpha5) || !pos(self.energy_scale) || !pos(self.rigid_tolerance) {
            return Err(Error::InvalidArgument(format!("edit weights must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Rigid motion `p ↦ R p + t` of a set of handles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandleTransform {
    /// Handle vertices moved by this transform; `None` means every handle.
    #[serde(default)]
    pub indices: Option<Vec<usize>>,
    /// Row-major `R`.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl HandleTransform {
    pub fn new(indices: Option<Vec<usize>>, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let r = &rotation;
        Self {
            indices,
            rotation: [r.m11, r.m12, r.m13, r.m21, r.m22, r.m23, r.m31, r.m32, r.m33],
            translation: [translation.x, translation.y, translation.z],
        }
    }

    pub fn identity() -> Self {
        Self::new(None, Matrix3::identity(), Vector3::zeros())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.rotation)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    fn check_rigid(&self, tol: f64) -> Result<()> {
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        let det = r.determinant();
        if !(ortho <= tol && (det - 1.0).abs() <= tol) || !self.translation.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "transform is not a proper rigid motion (‖RᵀR − I‖ = {ortho:.3e}, det R = {det:.6})"
            )));
        }
        Ok(())
    }
}

/// Symmetric positive definite system with some rows held at given values.
#[derive(Debug)]
struct PinnedSystem {
    free: Vec<usize>,
    pinned: Vec<usize>,
    chol: Option<Cholesky>,
    k_fp: Csr,
}

impl PinnedSystem {
    fn new(k: &Csr, pinned: &[usize], is_pinned: &[bool]) -> Result<Self> {
        let free: Vec<usize> = (0..k.nrows()).filter(|&i| !is_pinned[i]).collect();
        let chol = if free.is_empty() {
            None
        } else {
            Some(Cholesky::new(&k.select(&free, &free))?)
        };
        Ok(Self {
            k_fp: k.select(&free, pinned),
            free,
            pinned: pinned.to_vec(),
            chol,
        })
    }

    /// Solves `K x = b` on the free rows with `x[pinned] = values`.
    fn solve(&self, b: &Mat<f64>, values: &Mat<f64>) -> Mat<f64> {
        let n = b.nrows();
        let mut x = Mat::zeros(n, b.ncols());
        for (r, &p) in self.pinned.iter().enumerate() {
            for c in 0..b.ncols() {
                x[(p, c)] = values[(r, c)];
            }
        }
        if let Some(chol) = &self.chol {
            let coupling = self.k_fp.mul_dense(values.as_ref());
            let rhs = Mat::from_fn(self.free.len(), b.ncols(), |r, c| b[(self.free[r], c)] - coupling[(r, c)]);
            let y = chol.solve(rhs.as_ref());
            for (r, &f) in self.free.iter().enumerate() {
                for c in 0..b.ncols() {
                    x[(f, c)] = y[(r, c)];
                }
            }
        }
        x
    }
}

/// Factorizations for one handle set.
#[derive(Debug)]
pub struct HandleSet {
    handles: Vec<usize>,
    propagate: PinnedSystem,
    integrate: Integrator,
}

#[derive(Debug)]
enum Integrator {
    Hard(PinnedSystem),
    Soft { chol: Cholesky, mass: Vec<f64> },
}

impl HandleSet {
    /// Sorted, deduplicated handle vertices.
    pub fn indices(&self) -> &[usize] {
        &self.handles
    }
}

/// Result of one edit.
#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    pub vertices: Vec<Vector3<f64>>,
    /// Provisional embedding the network input was built from.
    pub provisional: Vec<Vector3<f64>>,
    /// Symmetric Dirichlet energy of the rest-to-result Jacobians.
    pub energy: SymmetricDirichlet,
    pub provisional_energy: SymmetricDirichlet,
}

/// Precomputed editing state for one rest mesh.
#[derive(Debug)]
pub struct Editor {
    mesh: TriMesh,
    ops: DifferentialOperators,
    frames: SourceFrames,
    net: Option<(Ljn, SpectralBasis, Mat<f64>)>,
    config: EditConfig,
}

impl Editor {
    /// Without a network the provisional polar rotations are integrated
    /// directly.
    pub fn new(mesh: TriMesh, net: Option<Ljn>, config: EditConfig) -> Result<Self> {
        config.validate()?;
        let ops = DifferentialOperators::new(&mesh)?;
        let components = ops.connected_components();
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        let frames = SourceFrames::new(&mesh)?;
        let net = match net {
            Some(net) => {
                if net.config.input_dim != 9 {
                    return Err(Error::InvalidArgument("editing needs a 9-channel rotation network".into()));
                }
                let k = net.config.k_feat.max(net.config.k_coord).min(mesh.num_vertices());
                let basis = SpectralBasis::compute(&ops, k)?;
                let mut editor_net = (net, basis, Mat::zeros(0, 0));
                // Rest calibration: the offset that makes the rest signal map
                // exactly to identity Jacobians.
                let theta = rotation_input(&ops, &frames, mesh.vertices())?;
                let (_, flat, _) = editor_net.0.forward(&ops, &editor_net.1, theta.as_ref())?;
                editor_net.2 = Mat::from_fn(flat.nrows(), 9, |r, c| flat[(r, c)] - if c % 4 == 0 { 1.0 } else { 0.0 });
                Some(editor_net)
            }
            None => None,
        };
        Ok(Self {
            mesh,
            ops,
            frames,
            net,
            config,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn ops(&self) -> &DifferentialOperators {
        &self.ops
    }

    pub fn config(&self) -> &EditConfig {
        &self.config
    }

    pub fn has_network(&self) -> bool {
        self.net.is_some()
    }

    /// Validates, deduplicates and factorizes a handle set. An empty set is
    /// accepted but cannot be edited.
    pub fn handle_set(&self, indices: &[usize]) -> Result<HandleSet> {
        let n = self.mesh.num_vertices();
        let bad: Vec<usize> = indices.iter().copied().filter(|&i| i >= n).collect();
        if !bad.is_empty() {
            return Err(Error::InvalidHandles { indices: bad, count: n });
        }
        let mut handles = indices.to_vec();
        handles.sort_unstable();
        handles.dedup();
        let mut is_handle = vec![false; n];
        handles.iter().for_each(|&h| is_handle[h] = true);
        if handles.is_empty() {
            // Placeholder factorizations are never used; apply rejects the set.
            return Ok(HandleSet {
                handles,
                propagate: PinnedSystem {
                    free: Vec::new(),
                    pinned: Vec::new(),
                    chol: None,
                    k_fp: Csr::from_triplets(0, 0, &[]),
                },
                integrate: Integrator::Hard(PinnedSystem {
                    free: Vec::new(),
                    pinned: Vec::new(),
                    chol: None,
                    k_fp: Csr::from_triplets(0, 0, &[]),
                }),
            });
        }
        let lap = self.ops.laplacian();
        let prop = match self.config.propagation {
            Propagation::Laplacian => lap.clone(),
            Propagation::BiLaplacian => {
                let inv: Vec<f64> = self.ops.mass().iter().map(|m| 1.0 / m).collect();
                lap.transpose().matmul(&lap.scale_rows(&inv))
            }
        };
        let propagate = PinnedSystem::new(&prop, &handles, &is_handle)?;
        let integrate = match self.config.handles {
            HandleMode::Hard => Integrator::Hard(PinnedSystem::new(lap, &handles, &is_handle)?),
            HandleMode::Soft => {
                let mass: Vec<f64> = (0..n)
                    .map(|i| if is_handle[i] { self.ops.mass()[i] } else { 0.0 })
                    .collect();
                let bilap = lap.transpose().matmul(&lap.scale_rows(self.ops.mass()));
                let k = bilap
                    .scale(self.config.alpha5)
                    .add_scaled(&Csr::diagonal(&mass), self.config.alpha4);
                Integrator::Soft {
                    chol: Cholesky::new(&k)?,
                    mass,
                }
            }
        };
        Ok(HandleSet {
            handles,
            propagate,
            integrate,
        })
    }

    /// Prescribed handle positions, one row per handle.
    pub fn handle_targets(&self, set: &HandleSet, transforms: &[HandleTransform]) -> Result<Mat<f64>> {
        if set.handles.is_empty() {
            return Err(Error::InvalidArgument("no handles are set".into()));
        }
        let v = self.mesh.vertices();
        let mut targets: Vec<Option<Vector3<f64>>> = vec![None; set.handles.len()];
        for t in transforms {
            t.check_rigid(self.config.rigid_tolerance)?;
            let rows: Vec<usize> = match &t.indices {
                None => (0..set.handles.len()).collect(),
                Some(idx) => {
                    let mut rows = Vec::with_capacity(idx.len());
                    let mut missing = Vec::new();
                    for &i in idx {
                        match set.handles.binary_search(&i) {
                            Ok(r) => rows.push(r),
                            Err(_) => missing.push(i),
                        }
                    }
                    if !missing.is_empty() {
                        return Err(Error::InvalidArgument(format!("vertices {missing:?} are not handles")));
                    }
                    rows
                }
            };
            for r in rows {
                if targets[r].is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "handle {} is moved by more than one transform",
                        set.handles[r]
                    )));
                }
                targets[r] = Some(t.rotation() * v[set.handles[r]] + t.translation());
            }
        }
        // Handles without a transform stay at rest.
        Ok(Mat::from_fn(set.handles.len(), 3, |r, c| {
            targets[r].unwrap_or(v[set.handles[r]])[c]
        }))
    }

    /// Propagates handle displacements to every vertex.
    pub fn provisional(&self, set: &HandleSet, targets: &Mat<f64>) -> Vec<Vector3<f64>> {
        let v = self.mesh.vertices();
        let n = v.len();
        let disp = Mat::from_fn(set.handles.len(), 3, |r, c| targets[(r, c)] - v[set.handles[r]][c]);
        let d = set.propagate.solve(&Mat::zeros(n, 3), &disp);
        (0..n).map(|i| v[i] + Vector3::new(d[(i, 0)], d[(i, 1)], d[(i, 2)])).collect()
    }

    /// Jacobians predicted from the provisional embedding.
    pub fn predicted_field(&self, provisional: &[Vector3<f64>]) -> Result<JacobianField> {
        match &self.net {
            None => {
                let field = self.frames.jacobians_to(self.ops.faces(), provisional);
                Ok(JacobianField::new(polar_rotations(&field)?))
            }
            Some((net, basis, offset)) => {
                let theta = rotation_input(&self.ops, &self.frames, provisional)?;
                let (_, flat, _) = net.forward(&self.ops, basis, theta.as_ref())?;
                let j = &flat - offset;
                let field = unflatten(j.as_ref());
                if !field.is_finite() {
                    return Err(Error::NonFinite {
                        term: "predicted Jacobians".into(),
                    });
                }
                Ok(field)
            }
        }
    }

    /// Integrates `field` with the handles at `targets`.
    pub fn integrate(&self, set: &HandleSet, field: &JacobianField, targets: &Mat<f64>) -> Mat<f64> {
        let div = self.ops.divergence(field.to_stacked().as_ref());
        match &set.integrate {
            Integrator::Hard(sys) => sys.solve(&div, targets),
            Integrator::Soft { chol, mass } => {
                let (a4, a5) = (self.config.alpha4, self.config.alpha5);
                let mdiv = Mat::from_fn(div.nrows(), 3, |i, c| self.ops.mass()[i] * div[(i, c)]);
                let mut rhs = self.ops.laplacian().tmul_dense(mdiv.as_ref()) * faer::Scale(a5);
                for (r, &h) in set.handles.iter().enumerate() {
                    for c in 0..3 {
                        rhs[(h, c)] += a4 * mass[h] * targets[(r, c)];
                    }
                }
                chol.solve(rhs.as_ref())
            }
        }
    }

    /// Symmetric Dirichlet energy of the rest-to-`positions` Jacobians.
    pub fn energy(&self, positions: &[Vector3<f64>]) -> Result<SymmetricDirichlet> {
        let field = self.frames.jacobians_to(self.ops.faces(), positions);
        symmetric_dirichlet(&field, &self.mesh, self.config.energy_scale)
    }

    /// Full edit. Transforms are relative to the rest pose, so repeated
    /// calls with the same input give the same output.
    pub fn apply(&self, set: &HandleSet, transforms: &[HandleTransform]) -> Result<EditResult> {
        let targets = self.handle_targets(set, transforms)?;
        let provisional = self.provisional(set, &targets);
        let field = self.predicted_field(&provisional)?;
        let v = mat_to_positions(&self.integrate(set, &field, &targets));
        if !v.iter().all(|p| p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite {
                term: "edited vertices".into(),
            });
        }
        Ok(EditResult {
            energy: self.energy(&v)?,
            provisional_energy: self.energy(&provisional)?,
            vertices: v,
            provisional,
        })
    }
}

/// Vertex-averaged polar rotations of the rest-to-`positions` Jacobians.
pub fn rotation_input(
    ops: &DifferentialOperators,
    frames: &SourceFrames,
    positions: &[Vector3<f64>],
) -> Result<Mat<f64>> {
    let field = frames.jacobians_to(ops.faces(), positions);
    let q = polar_rotations(&field)?;
    Ok(vertex_average(ops, &JacobianField::new(q)))
}
