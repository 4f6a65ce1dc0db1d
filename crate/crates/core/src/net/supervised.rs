//! Supervised loss on same-connectivity pairs, with gradients through the
//! Poisson solve (adjoint method) and the frames of the integrated shape.

use std::collections::BTreeMap;

use faer::{Mat, MatRef};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::signal::{rotation_signal, training_signal, SignalMode, SourceFrames};
use super::{flatten, unflatten, Ljn, LossWeights};
use crate::deform::{jacobian_between, JacobianField, PoissonSolver};
use crate::error::{Error, Result};
use crate::frames::{frame, frame_backward, FaceFrames};
use crate::mesh::TriMesh;
use crate::operators::DifferentialOperators;
use crate::spectral::SpectralBasis;

/// One training pair with everything the loss needs precomputed.
pub struct TrainSample {
    pub name: String,
    pub ops: DifferentialOperators,
    pub source: SourceFrames,
    /// Source eigenbasis used by the projection layers.
    pub basis: SpectralBasis,
    /// Target vertices `V₂`.
    pub target: Mat<f64>,
    /// Ground-truth Jacobians `J*`, flattened `|F| × 9`.
    pub j_star: Mat<f64>,
    pub poisson: PoissonSolver,
    pub mode: SignalMode,
    signals: BTreeMap<usize, Mat<f64>>,
    target_basis: Option<SpectralBasis>,
}

impl TrainSample {
    /// Builds a sample. In spectral mode the input signals for every `k` in
    /// `ks` are precomputed from the target's own eigenbasis.
    pub fn new(
        name: impl Into<String>,
        source: &TriMesh,
        target: &TriMesh,
        mode: SignalMode,
        k_feat: usize,
        ks: &[usize],
    ) -> Result<Self> {
        if source.num_vertices() != target.num_vertices() || source.faces() != target.faces() {
            return Err(Error::DimensionMismatch(
                "supervised pairs must share connectivity".into(),
            ));
        }
        let ops = DifferentialOperators::new(source)?;
        let frames = SourceFrames::new(source)?;
        let j_star = jacobian_between(frames.frames(), &FaceFrames::new(target)?)?;
        let n = source.num_vertices();
        if k_feat > n {
            return Err(Error::InvalidArgument(format!(
                "k_feat = {k_feat} exceeds the vertex count {n}"
            )));
        }
        let basis = SpectralBasis::compute(&ops, k_feat)?;
        let poisson = PoissonSolver::new(&ops)?;
        let target_v = target.vertex_matrix();
        let mut signals = BTreeMap::new();
        let mut target_basis = None;
        match mode {
            SignalMode::Spectral => {
                let k_max = ks.iter().copied().max().unwrap_or(1).min(n);
                let tops = DifferentialOperators::new(target)?;
                let tb = SpectralBasis::compute(&tops, k_max)?;
                for &k in ks {
                    let k = k.min(n);
                    if !signals.contains_key(&k) {
                        signals.insert(k, training_signal(&ops, &frames, &tb, target_v.as_ref(), k)?);
                    }
                }
                target_basis = Some(tb);
            }
            SignalMode::Rotation => {
                signals.insert(0, rotation_signal(&ops, &j_star)?);
            }
        }
        Ok(Self {
            name: name.into(),
            ops,
            source: frames,
            basis,
            target: target_v,
            j_star: flatten(&j_star),
            poisson,
            mode,
            signals,
            target_basis,
        })
    }

    /// Input signal for truncation order `k` (ignored in rotation mode).
    pub fn signal(&self, k: usize) -> Result<Mat<f64>> {
        match self.mode {
            SignalMode::Rotation => Ok(self.signals[&0].clone()),
            SignalMode::Spectral => {
                let k = k.min(self.ops.num_vertices());
                if let Some(s) = self.signals.get(&k) {
                    return Ok(s.clone());
                }
                let tb = self.target_basis.as_ref().expect("spectral samples keep a target basis");
                if k > tb.k() {
                    return Err(Error::InvalidArgument(format!(
                        "signal order {k} exceeds cached target basis {}",
                        tb.k()
                    )));
                }
                training_signal(&self.ops, &self.source, tb, self.target.as_ref(), k)
            }
        }
    }

    pub fn ground_truth(&self) -> JacobianField {
        unflatten(self.j_star.as_ref())
    }
}

/// Per-term values of the supervised loss (already weighted).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub jacobian: f64,
    pub vertex: f64,
    pub integrated: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.jacobian + self.vertex + self.integrated
    }

    pub fn add(&mut self, o: &LossTerms) {
        self.jacobian += o.jacobian;
        self.vertex += o.vertex;
        self.integrated += o.integrated;
    }
}

/// Vertex positions integrated from a flattened field, centroid-aligned to
/// the target.
pub fn integrate_aligned(sample: &TrainSample, j_flat: MatRef<'_, f64>) -> Mat<f64> {
    let div = sample.ops.divergence(unflatten(j_flat).to_stacked().as_ref());
    let mut v = sample.poisson.solve_rhs(div.as_ref());
    let n = v.nrows() as f64;
    for c in 0..3 {
        let mean = sample.target.col(c).iter().sum::<f64>() / n;
        for r in 0..v.nrows() {
            v[(r, c)] += mean;
        }
    }
    v
}

/// Loss and `∂L/∂Ĵ` for a predicted flattened field `Ĵ` (`|F| × 9`).
pub fn loss_wrt_jacobians(
    sample: &TrainSample,
    j_flat: MatRef<'_, f64>,
    w: &LossWeights,
    mass_weighted_vertices: bool,
) -> Result<(LossTerms, Mat<f64>)> {
    let nf = sample.ops.num_faces();
    let n = sample.ops.num_vertices();
    if j_flat.nrows() != nf || j_flat.ncols() != 9 {
        return Err(Error::DimensionMismatch("predicted field has the wrong shape".into()));
    }
    let mut terms = LossTerms::default();
    let mut dj = Mat::<f64>::zeros(nf, 9);
    for f in 0..nf {
        for c in 0..9 {
            let r = j_flat[(f, c)] - sample.j_star[(f, c)];
            terms.jacobian += w.alpha1 * r * r;
            dj[(f, c)] = 2.0 * w.alpha1 * r;
        }
    }

    let mut gv = Mat::<f64>::zeros(n, 3);
    if w.alpha2 != 0.0 || w.alpha3 != 0.0 {
        let v = integrate_aligned(sample, j_flat);
        for i in 0..n {
            let m = if mass_weighted_vertices { sample.ops.mass()[i] } else { 1.0 };
            for c in 0..3 {
                let r = v[(i, c)] - sample.target[(i, c)];
                terms.vertex += w.alpha2 * m * r * r;
                gv[(i, c)] = 2.0 * w.alpha2 * m * r;
            }
        }
        if w.alpha3 != 0.0 {
            let pos: Vec<Vector3<f64>> = (0..n)
                .map(|i| Vector3::new(v[(i, 0)], v[(i, 1)], v[(i, 2)]))
                .collect();
            for (f, t) in sample.ops.faces().iter().enumerate() {
                let e = frame(&pos[t[0]], &pos[t[1]], &pos[t[2]]);
                let inv = sample.source.inverse(f);
                let jint = inv * e;
                let resid = Matrix3::from_fn(|r, c| jint[(r, c)] - sample.j_star[(f, 3 * r + c)]);
                terms.integrated += w.alpha3 * resid.norm_squared();
                let de = inv.transpose() * (resid * (2.0 * w.alpha3));
                let g = frame_backward(&pos[t[0]], &pos[t[1]], &pos[t[2]], &de);
                for (corner, &vi) in t.iter().enumerate() {
                    for c in 0..3 {
                        gv[(vi, c)] += g[corner][c];
                    }
                }
            }
        }
        // V̂ = C S ∇ᵀA Ĵ + centroid; one adjoint solve brings gV back to Ĵ.
        let ddiv = sample.poisson.adjoint(gv.as_ref());
        let dstack = sample.ops.divergence_adjoint(ddiv.as_ref());
        for f in 0..nf {
            for r in 0..3 {
                for c in 0..3 {
                    dj[(f, 3 * r + c)] += dstack[(3 * f + r, c)];
                }
            }
        }
    }
    for (name, v) in [
        ("jacobian", terms.jacobian),
        ("vertex", terms.vertex),
        ("integrated", terms.integrated),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name.into() });
        }
    }
    Ok((terms, dj))
}

/// Full supervised loss for one sample and its parameter gradient.
pub fn supervised_loss_and_grad(
    net: &Ljn,
    sample: &TrainSample,
    theta: MatRef<'_, f64>,
    w: &LossWeights,
    mass_weighted_vertices: bool,
) -> Result<(LossTerms, Vec<f64>)> {
    let (_, j_flat, tape) = net.forward(&sample.ops, &sample.basis, theta)?;
    let (terms, dj) = loss_wrt_jacobians(sample, j_flat.as_ref(), w, mass_weighted_vertices)?;
    let (grad, _) = net.backward(&sample.ops, &sample.basis, &tape, dj.as_ref())?;
    Ok((terms, grad))
}

/// Loss only (used by finite-difference checks and evaluation).
pub fn supervised_loss(
    net: &Ljn,
    sample: &TrainSample,
    theta: MatRef<'_, f64>,
    w: &LossWeights,
    mass_weighted_vertices: bool,
) -> Result<LossTerms> {
    let (_, j_flat, _) = net.forward(&sample.ops, &sample.basis, theta)?;
    Ok(loss_wrt_jacobians(sample, j_flat.as_ref(), w, mass_weighted_vertices)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkConfig;
    use crate::shapes::{self, CreatureParams, Pose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> TrainSample {
        let p = CreatureParams {
            around: 12,
            along: 14,
            ..Default::default()
        };
        let rest = shapes::creature(&p);
        let posed = shapes::pose(&rest, p.length, &Pose::random(2, 0.8));
        TrainSample::new("t", &rest, &posed, SignalMode::Spectral, 20, &[10, 20]).unwrap()
    }

    #[test]
    fn zero_at_ground_truth() {
        let s = sample();
        let (terms, dj) = loss_wrt_jacobians(&s, s.j_star.as_ref(), &LossWeights::default(), false).unwrap();
        assert!(terms.total() < 1e-18, "{terms:?}");
        assert!(dj.norm_max() < 1e-8);
    }

    #[test]
    fn jacobian_only_gradient_is_closed_form() {
        let s = sample();
        let w = LossWeights {
            alpha2: 0.0,
            alpha3: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let j = Mat::from_fn(s.j_star.nrows(), 9, |f, c| s.j_star[(f, c)] + rng.random_range(-0.1..0.1));
        let (_, dj) = loss_wrt_jacobians(&s, j.as_ref(), &w, false).unwrap();
        let want = Mat::from_fn(j.nrows(), 9, |f, c| 2.0 * (j[(f, c)] - s.j_star[(f, c)]));
        assert!((dj - want).norm_max() < 1e-10);
    }

    #[test]
    fn jacobian_gradient_matches_finite_differences() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = Mat::from_fn(s.j_star.nrows(), 9, |f, c| s.j_star[(f, c)] + rng.random_range(-0.2..0.2));
        let w = LossWeights::default();
        for mass_weighted in [false, true] {
            let (_, dj) = loss_wrt_jacobians(&s, j.as_ref(), &w, mass_weighted).unwrap();
            let h = 1e-6;
            for _ in 0..30 {
                let f = rng.random_range(0..j.nrows());
                let c = rng.random_range(0..9);
                let mut jp = j.clone();
                jp[(f, c)] += h;
                let mut jm = j.clone();
                jm[(f, c)] -= h;
                let lp = loss_wrt_jacobians(&s, jp.as_ref(), &w, mass_weighted).unwrap().0.total();
                let lm = loss_wrt_jacobians(&s, jm.as_ref(), &w, mass_weighted).unwrap().0.total();
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - dj[(f, c)]).abs() <= 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", dj[(f, c)]);
            }
        }
    }

    #[test]
    fn translation_invariant() {
        let p = CreatureParams {
            around: 12,
            along: 14,
            ..Default::default()
        };
        let rest = shapes::creature(&p);
        let posed = shapes::pose(&rest, p.length, &Pose::random(2, 0.8));
        let t = Vector3::new(1.5, -2.0, 0.5);
        let shift = |m: &TriMesh| m.with_vertices(m.vertices().iter().map(|v| v + t).collect()).unwrap();
        let a = TrainSample::new("a", &rest, &posed, SignalMode::Spectral, 20, &[10]).unwrap();
        let b = TrainSample::new("b", &shift(&rest), &shift(&posed), SignalMode::Spectral, 20, &[10]).unwrap();
        let mut net = Ljn::new(NetworkConfig {
            hidden: vec![8; 5],
            k_feat: 20,
            ..Default::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for v in net.mlp.params_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let w = LossWeights::default();
        let la = supervised_loss(&net, &a, a.signal(10).unwrap().as_ref(), &w, false).unwrap();
        let lb = supervised_loss(&net, &b, b.signal(10).unwrap().as_ref(), &w, false).unwrap();
        assert!((la.total() - lb.total()).abs() < 1e-8 * la.total());
    }

    #[test]
    fn rejects_mismatched_connectivity() {
        let a = shapes::icosphere(1);
        let b = shapes::icosphere(2);
        assert!(TrainSample::new("x", &a, &b, SignalMode::Spectral, 10, &[10]).is_err());
    }
}
