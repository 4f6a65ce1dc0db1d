//! Inference pipelines: deformation from a target and map refinement.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::deform::{recover_embedding, refine_p2p, JacobianField, PoissonSolver, RecoverySettings};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::net::signal::{inference_signal, training_signal, SourceFrames};
use crate::net::Ljn;
use crate::operators::DifferentialOperators;
use crate::spectral::{maps, SpectralBasis};

/// A mesh with the operators and eigenbasis the pipelines need.
#[derive(Debug, Clone)]
pub struct PreparedShape {
    pub mesh: TriMesh,
    pub ops: DifferentialOperators,
    pub basis: SpectralBasis,
}

impl PreparedShape {
    /// Computes `k` eigenfunctions (capped at the vertex count).
    pub fn new(mesh: TriMesh, k: usize) -> Result<Self> {
        let ops = DifferentialOperators::new(&mesh)?;
        let basis = SpectralBasis::compute(&ops, k.min(mesh.num_vertices()))?;
        Ok(Self { mesh, ops, basis })
    }

    pub fn vertices(&self) -> Mat<f64> {
        self.mesh.vertex_matrix()
    }
}

/// Basis size a shape needs for a network and truncation order `k`.
pub fn basis_size(net: &Ljn, k: usize) -> usize {
    net.config.k_feat.max(k)
}

/// Initial correspondence `source → target`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitMap {
    PointToPoint(Vec<usize>),
    /// `C₂₁`, mapping target coefficients to source coefficients.
    Functional(Mat<f64>),
}

#[derive(Debug, Clone)]
pub struct Refinement {
    /// Hard map the recovery was anchored to.
    pub initial: Vec<usize>,
    pub fmap: Mat<f64>,
    pub field: JacobianField,
    /// Recovered source-connectivity embedding near the target.
    pub embedding: Mat<f64>,
    pub map: Vec<usize>,
}

/// Functional map of order `k` and the hard map it is anchored to.
pub fn resolve_init(
    init: &InitMap,
    src: &PreparedShape,
    tgt: &PreparedShape,
    k: usize,
) -> Result<(Mat<f64>, Vec<usize>)> {
    let (b1, b2) = (src.basis.truncated(k)?, tgt.basis.truncated(k)?);
    match init {
        InitMap::PointToPoint(p) => Ok((maps::fmap_from_p2p(p, &b1, &b2)?, p.clone())),
        InitMap::Functional(c) => {
            if c.nrows() != k || c.ncols() != k {
                return Err(Error::DimensionMismatch(format!(
                    "initial functional map is {}x{}, expected {k}x{k}",
                    c.nrows(),
                    c.ncols()
                )));
            }
            Ok((c.clone(), maps::p2p_from_fmap(c.as_ref(), &b1, &b2)?))
        }
    }
}

/// Refines a map: functional map, pulled-back coarse signal, network
/// forward pass, embedding recovery, nearest-vertex map.
pub fn refine(
    net: &Ljn,
    src: &PreparedShape,
    tgt: &PreparedShape,
    init: &InitMap,
    k: usize,
    settings: RecoverySettings,
) -> Result<Refinement> {
    let (fmap, initial) = resolve_init(init, src, tgt, k)?;
    let frames = SourceFrames::new(&src.mesh)?;
    let v2 = tgt.vertices();
    let b1 = src.basis.truncated(k)?;
    let b2 = tgt.basis.truncated(k)?;
    let theta = inference_signal(&src.ops, &frames, &b1, &b2, fmap.as_ref(), v2.as_ref())?;
    let (field, _, _) = net.forward(&src.ops, &src.basis, theta.as_ref())?;
    let embedding = recover_embedding(&src.ops, &initial, v2.as_ref(), &field, settings)?;
    let map = refine_p2p(embedding.as_ref(), v2.as_ref())?;
    Ok(Refinement {
        initial,
        fmap,
        field,
        embedding,
        map,
    })
}

/// Deforms `src` toward `tgt`. With a map the embedding is recovered
/// against it; without one the pair must share connectivity, the signal is
/// the target's own `k`-band projection and the field is Poisson-integrated
/// and translated to the target's centroid.
pub fn deform(
    net: &Ljn,
    src: &PreparedShape,
    tgt: &PreparedShape,
    map: Option<&[usize]>,
    k: usize,
    settings: RecoverySettings,
) -> Result<Mat<f64>> {
    match map {
        Some(p) => Ok(refine(net, src, tgt, &InitMap::PointToPoint(p.to_vec()), k, settings)?.embedding),
        None => {
            if src.mesh.faces() != tgt.mesh.faces() || src.mesh.num_vertices() != tgt.mesh.num_vertices() {
                return Err(Error::DimensionMismatch(
                    "deforming without a map needs a target with the source connectivity".into(),
                ));
            }
            let frames = SourceFrames::new(&src.mesh)?;
            let v2 = tgt.vertices();
            let theta = training_signal(&src.ops, &frames, &tgt.basis, v2.as_ref(), k)?;
            let (field, _, _) = net.forward(&src.ops, &src.basis, theta.as_ref())?;
            let mut v = PoissonSolver::new(&src.ops)?.solve(&src.ops, &field)?;
            let n = v.nrows() as f64;
            for c in 0..3 {
                let mean = v2.col(c).iter().sum::<f64>() / n;
                for r in 0..v.nrows() {
                    v[(r, c)] += mean;
                }
            }
            Ok(v)
        }
    }
}

/// Summary of a deformation against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    /// Root-mean-square vertex error.
    pub rms: f64,
    pub bbox_diagonal: f64,
}

impl Reconstruction {
    pub fn new(v: &Mat<f64>, reference: &TriMesh) -> Result<Self> {
        if v.nrows() != reference.num_vertices() || v.ncols() != 3 {
            return Err(Error::DimensionMismatch("reconstruction size differs from the reference".into()));
        }
        let mut s = 0.0;
        for (i, p) in reference.vertices().iter().enumerate() {
            for c in 0..3 {
                s += (v[(i, c)] - p[c]).powi(2);
            }
        }
        Ok(Self {
            rms: (s / v.nrows() as f64).sqrt(),
            bbox_diagonal: reference.bbox_diagonal(),
        })
    }

    pub fn relative(&self) -> f64 {
        self.rms / self.bbox_diagonal
    }
}
