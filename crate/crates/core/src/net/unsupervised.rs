//! Joint learning of a soft correspondence and a deformation between two
//! meshes of arbitrary connectivity.
//!
//! Features come from wave-kernel-signature descriptors passed through a
//! shared per-vertex MLP. Per direction `a → b` the soft map
//! `P = softmax(F_a F_bᵀ / τ)` gives `Ĉ = Ψ_aᵀ M_a P Ψ_b`; the predicted map
//! `C` is a free `k × k` parameter block. The network input is built from the
//! pullback `Ψ_a Ĉ Ψ_bᵀ M_b V_b`, and the Jacobian loss compares the
//! prediction with the Jacobians of `P V_b`.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{Activation, Mlp, Tape};
use super::signal::{spectral_signal, SourceFrames};
use super::{flatten, unflatten, Ljn, LjnTape, LossWeights, NetworkConfig};
use crate::deform::{recover_embedding, refine_p2p, RecoverySettings};
use crate::error::{Error, Result};
use crate::frames::frame_backward;
use crate::mesh::{mat_to_positions, TriMesh};
use crate::operators::DifferentialOperators;
use crate::spectral::{maps, SpectralBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnsupervisedConfig {
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub tau: f64,
    /// Energy levels of the wave kernel signature.
    pub wks_energies: usize,
    pub extractor_hidden: usize,
    pub extractor_layers: usize,
    pub feature_dim: usize,
    pub extractor_activation: Activation,
    /// Optimize `b → a` as well as `a → b`.
    pub both_directions: bool,
    /// Seeds the feature extractor.
    pub seed: u64,
}

impl Default for UnsupervisedConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            lr_start: 1e-3,
            lr_end: 1e-4,
            tau: maps::DEFAULT_TAU,
            wks_energies: 100,
            extractor_hidden: 128,
            extractor_layers: 4,
            feature_dim: 128,
            extractor_activation: Activation::Relu,
            both_directions: true,
            seed: 0,
        }
    }
}

impl UnsupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.wks_energies < 2 || self.extractor_layers == 0 || self.extractor_hidden == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidArgument("extractor sizes must be positive".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn extractor_dims(&self) -> Vec<usize> {
        let mut d = vec![self.wks_energies];
        d.extend(std::iter::repeat_n(self.extractor_hidden, self.extractor_layers - 1));
        d.push(self.feature_dim);
        d
    }

    pub fn lr_at(&self, it: usize) -> f64 {
        if self.iterations <= 1 {
            return self.lr_start;
        }
        let t = it as f64 / (self.iterations - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }
}

/// Wave kernel signature, `|V| × energies`. Eigenvalues and squared
/// eigenfunctions are rescaled by the surface area so the descriptor does not
/// depend on the mesh scale. See [`standardize_columns`] for the network input.
pub fn wave_kernel_signature(basis: &SpectralBasis, area: f64, energies: usize) -> Result<Mat<f64>> {
    let evals: Vec<(usize, f64)> = basis
        .evals()
        .iter()
        .enumerate()
        .map(|(i, &l)| (i, l * area))
        .filter(|&(_, l)| l > 1e-10)
        .collect();
    if evals.len() < 2 || energies < 2 {
        return Err(Error::InvalidArgument(
            "wave kernel signature needs at least two nonzero eigenvalues".into(),
        ));
    }
    let lo = evals[0].1.ln();
    let hi = evals[evals.len() - 1].1.ln();
    let sigma = 7.0 * (hi - lo) / energies as f64;
    let (mut e_lo, mut e_hi) = (lo + 2.0 * sigma, hi - 2.0 * sigma);
    if e_hi <= e_lo {
        (e_lo, e_hi) = (lo, hi);
    }
    let psi = basis.evecs();
    let n = basis.num_vertices();
    let mut out = Mat::zeros(n, energies);
    for t in 0..energies {
        let e = e_lo + (e_hi - e_lo) * t as f64 / (energies - 1) as f64;
        let w: Vec<f64> = evals
            .iter()
            .map(|&(_, l)| (-(e - l.ln()).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = w.iter().sum();
        for (&(j, _), wj) in evals.iter().zip(&w) {
            let s = wj / total * area;
            for i in 0..n {
                out[(i, t)] += s * psi[(i, j)] * psi[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Mass-weighted z-score of every column, so descriptor channels enter the
/// extractor at comparable scales.
pub fn standardize_columns(x: &mut Mat<f64>, mass: &[f64]) {
    let total: f64 = mass.iter().sum();
    for j in 0..x.ncols() {
        let mean = (0..x.nrows()).map(|i| mass[i] * x[(i, j)]).sum::<f64>() / total;
        let var = (0..x.nrows()).map(|i| mass[i] * (x[(i, j)] - mean).powi(2)).sum::<f64>() / total;
        let sd = var.sqrt();
        for i in 0..x.nrows() {
            x[(i, j)] = if sd > 1e-12 { (x[(i, j)] - mean) / sd } else { 0.0 };
        }
    }
}

/// Everything per shape that stays fixed during optimization.
pub struct ShapeData {
    pub ops: DifferentialOperators,
    pub frames: SourceFrames,
    pub basis: SpectralBasis,
    pub vertices: Mat<f64>,
    pub descriptors: Mat<f64>,
}

impl ShapeData {
    pub fn new(mesh: &TriMesh, k_basis: usize, energies: usize) -> Result<Self> {
        let ops = DifferentialOperators::new(mesh)?;
        let frames = SourceFrames::new(mesh)?;
        let basis = SpectralBasis::compute(&ops, k_basis.min(mesh.num_vertices()))?;
        let mut descriptors = wave_kernel_signature(&basis, ops.total_area(), energies)?;
        standardize_columns(&mut descriptors, ops.mass());
        Ok(Self {
            ops,
            frames,
            basis,
            vertices: mesh.vertex_matrix(),
            descriptors,
        })
    }

    /// Basis size needed by a network configuration.
    pub fn basis_size(net: &NetworkConfig) -> usize {
        net.k_feat.max(net.k_coord)
    }
}

/// Weighted objective components, summed over directions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub orthogonality: f64,
    pub alignment: f64,
    pub data: f64,
    pub smoothness: f64,
    pub determinant: f64,
    /// Faces of the predicted field with negative determinant.
    pub negative_det_faces: usize,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.orthogonality + self.alignment + self.data + self.smoothness + self.determinant
    }

    fn add(&mut self, o: &ObjectiveTerms) {
        self.orthogonality += o.orthogonality;
        self.alignment += o.alignment;
        self.data += o.data;
        self.smoothness += o.smoothness;
        self.determinant += o.determinant;
        self.negative_det_faces += o.negative_det_faces;
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("orthogonality", self.orthogonality),
            ("alignment", self.alignment),
            ("data", self.data),
            ("smoothness", self.smoothness),
            ("determinant", self.determinant),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite { term: name.into() });
            }
        }
        Ok(())
    }
}

fn mm(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, 1.0, Par::Seq);
    out
}

fn cofactor(m: &Matrix3<f64>) -> Matrix3<f64> {
    let r = |i: usize| -> Vector3<f64> { m.row(i).transpose() };
    Matrix3::from_rows(&[
        r(1).cross(&r(2)).transpose(),
        r(2).cross(&r(0)).transpose(),
        r(0).cross(&r(1)).transpose(),
    ])
}

/// Jacobian loss for one direction on flattened fields: data term against
/// `J̊`, smoothness against the neighborhood mean `H Ĵ`, and `(det Ĵ − 1)²`.
/// Returns the terms and the gradients with respect to `Ĵ` and `J̊`.
pub fn jacobian_objective(
    ops: &DifferentialOperators,
    j_hat: MatRef<'_, f64>,
    j_ring: MatRef<'_, f64>,
    w: &LossWeights,
) -> (ObjectiveTerms, Mat<f64>, Mat<f64>) {
    let nf = j_hat.nrows();
    let mut terms = ObjectiveTerms::default();
    let mut d_hat = Mat::zeros(nf, 9);
    let mut d_ring = Mat::zeros(nf, 9);
    for f in 0..nf {
        for c in 0..9 {
            let r = j_hat[(f, c)] - j_ring[(f, c)];
            terms.data += r * r;
            d_hat[(f, c)] = 2.0 * r;
            d_ring[(f, c)] = -2.0 * r;
        }
    }
    let h = ops.face_adjacency();
    let hj = h.mul_dense(j_hat);
    let resid = Mat::from_fn(nf, 9, |f, c| j_hat[(f, c)] - hj[(f, c)]);
    let ht_r = h.tmul_dense(resid.as_ref());
    for f in 0..nf {
        for c in 0..9 {
            terms.smoothness += w.alpha6 * resid[(f, c)].powi(2);
            d_hat[(f, c)] += 2.0 * w.alpha6 * (resid[(f, c)] - ht_r[(f, c)]);
        }
    }
    for f in 0..nf {
        let m = Matrix3::from_fn(|r, c| j_hat[(f, 3 * r + c)]);
        let det = m.determinant();
        if det < 0.0 {
            terms.negative_det_faces += 1;
        }
        terms.determinant += w.alpha7 * (det - 1.0).powi(2);
        let g = cofactor(&m) * (2.0 * w.alpha7 * (det - 1.0));
        for r in 0..3 {
            for c in 0..3 {
                d_hat[(f, 3 * r + c)] += g[(r, c)];
            }
        }
    }
    (terms, d_hat, d_ring)
}

/// Forward quantities of one direction.
pub struct DirectionState {
    /// Soft map `P`, `|V_src| × |V_tgt|`.
    pub soft: Mat<f64>,
    /// `Ĉ = Ψ_srcᵀ M_src P Ψ_tgt`.
    pub c_hat: Mat<f64>,
    /// Target coefficients `Ψ_tgtᵀ M_tgt V_tgt`.
    pub target_coeffs: Mat<f64>,
    /// Pulled-back coarse geometry on the source.
    pub coarse: Mat<f64>,
    pub theta: Mat<f64>,
    /// Predicted field, flattened.
    pub j_hat: Mat<f64>,
    /// Soft-mapped positions `P V_tgt`.
    pub soft_positions: Mat<f64>,
    /// Jacobians to the soft-mapped positions, flattened.
    pub j_ring: Mat<f64>,
    tape: LjnTape,
}

/// Runs one direction `src → tgt` with fmap size `k`.
pub fn direction_forward(
    net: &Ljn,
    src: &ShapeData,
    tgt: &ShapeData,
    f_src: MatRef<'_, f64>,
    f_tgt: MatRef<'_, f64>,
    k: usize,
    tau: f64,
) -> Result<DirectionState> {
    if k > src.basis.k() || k > tgt.basis.k() {
        return Err(Error::InvalidArgument(format!(
            "fmap size {k} exceeds the bases ({} and {})",
            src.basis.k(),
            tgt.basis.k()
        )));
    }
    let soft = maps::soft_map(f_src, f_tgt, tau)?;
    let c_hat = maps::fmap_from_soft(soft.as_ref(), &src.basis, &tgt.basis, k, k)?;
    let target_coeffs = tgt.basis.analyze_k(tgt.vertices.as_ref(), k)?;
    let coarse = mm(src.basis.columns(k), mm(c_hat.as_ref(), target_coeffs.as_ref()).as_ref());
    let theta = spectral_signal(&src.ops, &src.frames, coarse.as_ref())?;
    let (_, j_hat, tape) = net.forward(&src.ops, &src.basis, theta.as_ref())?;
    let soft_positions = mm(soft.as_ref(), tgt.vertices.as_ref());
    let j_ring = flatten(
        &src
            .frames
            .jacobians_to(src.ops.faces(), &mat_to_positions(&soft_positions)),
    );
    Ok(DirectionState {
        soft,
        c_hat,
        target_coeffs,
        coarse,
        theta,
        j_hat,
        soft_positions,
        j_ring,
        tape,
    })
}

/// Gradient of `Σ_f ⟨G_f, E_src_f⁻¹ E(x)_f⟩` with respect to positions `x`.
fn frames_adjoint(src: &ShapeData, x: &Mat<f64>, g_flat: MatRef<'_, f64>) -> Mat<f64> {
    let pos = mat_to_positions(x);
    let mut out = Mat::zeros(x.nrows(), 3);
    for (f, t) in src.ops.faces().iter().enumerate() {
        let g = Matrix3::from_fn(|r, c| g_flat[(f, 3 * r + c)]);
        let de = src.frames.inverse(f).transpose() * g;
        let d = frame_backward(&pos[t[0]], &pos[t[1]], &pos[t[2]], &de);
        for (corner, &v) in t.iter().enumerate() {
            for c in 0..3 {
                out[(v, c)] += d[corner][c];
            }
        }
    }
    out
}

struct DirectionGrads {
    d_src: Mat<f64>,
    d_tgt: Mat<f64>,
    d_c: Mat<f64>,
    d_net: Vec<f64>,
}

fn direction_backward(
    net: &Ljn,
    src: &ShapeData,
    tgt: &ShapeData,
    f_src: MatRef<'_, f64>,
    f_tgt: MatRef<'_, f64>,
    c: MatRef<'_, f64>,
    st: &DirectionState,
    tau: f64,
    w: &LossWeights,
) -> Result<(ObjectiveTerms, DirectionGrads)> {
    let k = c.nrows();
    let (mut terms, d_hat, d_ring) = jacobian_objective(&src.ops, st.j_hat.as_ref(), st.j_ring.as_ref(), w);

    // ‖CᵀC − I‖² and ‖C − Ĉ‖².
    let mut ctc = mm(c.transpose(), c);
    for i in 0..k {
        ctc[(i, i)] -= 1.0;
    }
    terms.orthogonality = ctc.col_iter().map(|col| col.iter().map(|v| v * v).sum::<f64>()).sum();
    let mut d_c = mm(c, ctc.as_ref());
    d_c.col_iter_mut().for_each(|col| col.iter_mut().for_each(|v| *v *= 4.0));
    let mut d_chat = Mat::zeros(k, k);
    for j in 0..k {
        for i in 0..k {
            let r = c[(i, j)] - st.c_hat[(i, j)];
            terms.alignment += r * r;
            d_c[(i, j)] += 2.0 * r;
            d_chat[(i, j)] = -2.0 * r;
        }
    }

    // Network, then its input through vertex averaging and frames.
    let (d_net, d_theta) = net.backward(&src.ops, &src.basis, &st.tape, d_hat.as_ref())?;
    let d_jbar = src.ops.face_to_vertex().tmul_dense(d_theta.as_ref());
    let d_coarse = frames_adjoint(src, &st.coarse, d_jbar.as_ref());
    // coarse = Ψ Ĉ B
    let psi_s = src.basis.columns(k);
    let t = mm(psi_s.transpose(), d_coarse.as_ref());
    let t = mm(t.as_ref(), st.target_coeffs.transpose());
    d_chat += t;

    // Ĉ = Ψ_sᵀ M_s P Ψ_t and P V_t.
    let d_soft_pos = frames_adjoint(src, &st.soft_positions, d_ring.as_ref());
    let m_psi = Mat::from_fn(psi_s.nrows(), k, |i, j| src.basis.mass()[i] * psi_s[(i, j)]);
    let mut d_p = mm(mm(m_psi.as_ref(), d_chat.as_ref()).as_ref(), tgt.basis.columns(k).transpose());
    matmul(
        d_p.as_mut(),
        Accum::Add,
        d_soft_pos.as_ref(),
        tgt.vertices.transpose(),
        1.0,
        Par::Seq,
    );

    // Row softmax, then S = F_s F_tᵀ / τ.
    let p = &st.soft;
    let mut d_s = Mat::zeros(p.nrows(), p.ncols());
    for i in 0..p.nrows() {
        let mut dot = 0.0;
        for j in 0..p.ncols() {
            dot += d_p[(i, j)] * p[(i, j)];
        }
        for j in 0..p.ncols() {
            d_s[(i, j)] = p[(i, j)] * (d_p[(i, j)] - dot);
        }
    }
    let mut d_src = Mat::zeros(f_src.nrows(), f_src.ncols());
    matmul(d_src.as_mut(), Accum::Replace, d_s.as_ref(), f_tgt, 1.0 / tau, Par::Seq);
    let mut d_tgt = Mat::zeros(f_tgt.nrows(), f_tgt.ncols());
    matmul(d_tgt.as_mut(), Accum::Replace, d_s.transpose(), f_src, 1.0 / tau, Par::Seq);

    Ok((
        terms,
        DirectionGrads {
            d_src,
            d_tgt,
            d_c,
            d_net,
        },
    ))
}

/// Per-vertex features with unit-length rows.
pub struct Features {
    pub values: Mat<f64>,
    tape: Tape,
    norms: Vec<f64>,
    act: Activation,
}

pub fn extract_features(extractor: &Mlp, act: Activation, descriptors: MatRef<'_, f64>) -> Features {
    let (raw, tape) = extractor.forward(descriptors, act, None, 0);
    let norms: Vec<f64> = (0..raw.nrows())
        .map(|i| (0..raw.ncols()).map(|j| raw[(i, j)].powi(2)).sum::<f64>().sqrt())
        .collect();
    let values = Mat::from_fn(raw.nrows(), raw.ncols(), |i, j| {
        if norms[i] > 0.0 {
            raw[(i, j)] / norms[i]
        } else {
            0.0
        }
    });
    Features {
        values,
        tape,
        norms,
        act,
    }
}

fn features_backward(extractor: &Mlp, feats: &Features, d_f: MatRef<'_, f64>) -> Vec<f64> {
    let f = &feats.values;
    let d_raw = Mat::from_fn(f.nrows(), f.ncols(), |i, j| {
        let n = feats.norms[i];
        if n == 0.0 {
            return 0.0;
        }
        let dot: f64 = (0..f.ncols()).map(|l| f[(i, l)] * d_f[(i, l)]).sum();
        (d_f[(i, j)] - f[(i, j)] * dot) / n
    });
    extractor
        .backward(&feats.tape, d_raw.as_ref(), feats.act, None, 0)
        .0
}

/// Trainable state of the joint objective.
#[derive(Debug, Clone, PartialEq)]
pub struct UnsupervisedModel {
    pub extractor: Mlp,
    pub net: Ljn,
    /// Predicted map for `a → b` (`k × k`).
    pub c_ab: Mat<f64>,
    /// Predicted map for `b → a`.
    pub c_ba: Mat<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub extractor: Vec<f64>,
    pub net: Vec<f64>,
    pub c_ab: Mat<f64>,
    pub c_ba: Mat<f64>,
}

impl UnsupervisedModel {
    /// Fresh model; each free map starts at the soft-map estimate of the
    /// initial features.
    pub fn new(net: Ljn, cfg: &UnsupervisedConfig, a: &ShapeData, b: &ShapeData) -> Result<Self> {
        cfg.validate()?;
        let extractor = Mlp::new(&cfg.extractor_dims(), cfg.seed, false);
        let k = net.config.k_coord;
        let fa = extract_features(&extractor, cfg.extractor_activation, a.descriptors.as_ref());
        let fb = extract_features(&extractor, cfg.extractor_activation, b.descriptors.as_ref());
        let fmap = |s: &ShapeData, t: &ShapeData, fs: &Mat<f64>, ft: &Mat<f64>| -> Result<Mat<f64>> {
            if k > s.basis.k() || k > t.basis.k() {
                return Err(Error::InvalidArgument(format!("fmap size {k} exceeds a basis")));
            }
            let p = maps::soft_map(fs.as_ref(), ft.as_ref(), cfg.tau)?;
            maps::fmap_from_soft(p.as_ref(), &s.basis, &t.basis, k, k)
        };
        let c_ab = fmap(a, b, &fa.values, &fb.values)?;
        let c_ba = fmap(b, a, &fb.values, &fa.values)?;
        Ok(Self {
            extractor,
            net,
            c_ab,
            c_ba,
        })
    }

    pub fn k(&self) -> usize {
        self.c_ab.nrows()
    }
}

/// Objective value and gradients for every parameter block.
pub fn unsupervised_objective(
    model: &UnsupervisedModel,
    a: &ShapeData,
    b: &ShapeData,
    cfg: &UnsupervisedConfig,
    w: &LossWeights,
) -> Result<(ObjectiveTerms, ModelGrads)> {
    let k = model.k();
    let fa = extract_features(&model.extractor, cfg.extractor_activation, a.descriptors.as_ref());
    let fb = extract_features(&model.extractor, cfg.extractor_activation, b.descriptors.as_ref());
    let mut terms = ObjectiveTerms::default();
    let mut d_fa = Mat::zeros(fa.values.nrows(), fa.values.ncols());
    let mut d_fb = Mat::zeros(fb.values.nrows(), fb.values.ncols());
    let mut net_grad = vec![0.0; model.net.mlp.params().len()];

    let st = direction_forward(&model.net, a, b, fa.values.as_ref(), fb.values.as_ref(), k, cfg.tau)?;
    let (t, g) = direction_backward(
        &model.net,
        a,
        b,
        fa.values.as_ref(),
        fb.values.as_ref(),
        model.c_ab.as_ref(),
        &st,
        cfg.tau,
        w,
    )?;
    drop(st);
    terms.add(&t);
    d_fa += g.d_src;
    d_fb += g.d_tgt;
    net_grad.iter_mut().zip(&g.d_net).for_each(|(x, y)| *x += y);
    let d_cab = g.d_c;

    let mut d_cba = Mat::zeros(k, k);
    if cfg.both_directions {
        let st = direction_forward(&model.net, b, a, fb.values.as_ref(), fa.values.as_ref(), k, cfg.tau)?;
        let (t, g) = direction_backward(
            &model.net,
            b,
            a,
            fb.values.as_ref(),
            fa.values.as_ref(),
            model.c_ba.as_ref(),
            &st,
            cfg.tau,
            w,
        )?;
        terms.add(&t);
        d_fb += g.d_src;
        d_fa += g.d_tgt;
        net_grad.iter_mut().zip(&g.d_net).for_each(|(x, y)| *x += y);
        d_cba = g.d_c;
    }
    terms.check()?;

    let mut ext = features_backward(&model.extractor, &fa, d_fa.as_ref());
    let gb = features_backward(&model.extractor, &fb, d_fb.as_ref());
    ext.iter_mut().zip(&gb).for_each(|(x, y)| *x += y);
    Ok((
        terms,
        ModelGrads {
            extractor: ext,
            net: net_grad,
            c_ab: d_cab,
            c_ba: d_cba,
        },
    ))
}

/// One line of the unsupervised log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lr: f64,
    pub terms: ObjectiveTerms,
    pub total: f64,
}

fn mat_to_vec(m: &Mat<f64>) -> Vec<f64> {
    m.col_iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()).collect()
}

fn vec_into_mat(v: &[f64], m: &mut Mat<f64>) {
    let r = m.nrows();
    for j in 0..m.ncols() {
        for i in 0..r {
            m[(i, j)] = v[j * r + i];
        }
    }
}

/// Zero-shot optimization on one pair. `on_iter` runs after every step.
pub fn train_unsupervised(
    model: &mut UnsupervisedModel,
    a: &ShapeData,
    b: &ShapeData,
    cfg: &UnsupervisedConfig,
    w: &LossWeights,
    mut on_iter: impl FnMut(&IterationRecord, &UnsupervisedModel) -> Result<()>,
) -> Result<Vec<IterationRecord>> {
    cfg.validate()?;
    let kk = model.k() * model.k();
    let mut opt_ext = Adam::new(model.extractor.params().len());
    let mut opt_net = Adam::new(model.net.mlp.params().len());
    let mut opt_ab = Adam::new(kk);
    let mut opt_ba = Adam::new(kk);
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let lr = cfg.lr_at(it);
        let (terms, g) = unsupervised_objective(model, a, b, cfg, w)?;
        opt_ext.step(model.extractor.params_mut(), &g.extractor, lr);
        opt_net.step(model.net.mlp.params_mut(), &g.net, lr);
        let mut c = mat_to_vec(&model.c_ab);
        opt_ab.step(&mut c, &mat_to_vec(&g.c_ab), lr);
        vec_into_mat(&c, &mut model.c_ab);
        if cfg.both_directions {
            let mut c = mat_to_vec(&model.c_ba);
            opt_ba.step(&mut c, &mat_to_vec(&g.c_ba), lr);
            vec_into_mat(&c, &mut model.c_ba);
        }
        if !model.extractor.is_finite() || !model.net.mlp.is_finite() {
            return Err(Error::NonFinite {
                term: "parameters".into(),
            });
        }
        let rec = IterationRecord {
            iteration: it,
            lr,
            total: terms.total(),
            terms,
        };
        log::debug!("iteration {it}: loss {:.6e}", rec.total);
        on_iter(&rec, model)?;
        log.push(rec);
    }
    Ok(log)
}

/// Hard map `a → b` from the row-wise argmax of the current soft map.
pub fn soft_argmax_map(
    model: &UnsupervisedModel,
    a: &ShapeData,
    b: &ShapeData,
    cfg: &UnsupervisedConfig,
) -> Result<Vec<usize>> {
    let fa = extract_features(&model.extractor, cfg.extractor_activation, a.descriptors.as_ref());
    let fb = extract_features(&model.extractor, cfg.extractor_activation, b.descriptors.as_ref());
    let p = maps::soft_map(fa.values.as_ref(), fb.values.as_ref(), cfg.tau)?;
    Ok(maps::argmax_rows(p.as_ref()))
}

/// Refined map `a → b`: recover an embedding of `a` from the predicted field
/// and the soft-argmax map, then take nearest target vertices.
pub fn refined_map(
    model: &UnsupervisedModel,
    a: &ShapeData,
    b: &ShapeData,
    cfg: &UnsupervisedConfig,
    settings: RecoverySettings,
) -> Result<Vec<usize>> {
    let fa = extract_features(&model.extractor, cfg.extractor_activation, a.descriptors.as_ref());
    let fb = extract_features(&model.extractor, cfg.extractor_activation, b.descriptors.as_ref());
    let st = direction_forward(&model.net, a, b, fa.values.as_ref(), fb.values.as_ref(), model.k(), cfg.tau)?;
    let hard = maps::argmax_rows(st.soft.as_ref());
    let v = recover_embedding(&a.ops, &hard, b.vertices.as_ref(), &unflatten(st.j_hat.as_ref()), settings)?;
    refine_p2p(v.as_ref(), b.vertices.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::frame;
    use crate::shapes::{self, CreatureParams, Pose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_net() -> Ljn {
        Ljn::new(NetworkConfig {
            hidden: vec![8; 5],
            k_feat: 12,
            k_coord: 6,
            ..Default::default()
        })
        .unwrap()
    }

    fn small_cfg() -> UnsupervisedConfig {
        UnsupervisedConfig {
            wks_energies: 16,
            extractor_hidden: 12,
            feature_dim: 8,
            tau: 0.2,
            ..Default::default()
        }
    }

    fn pair() -> (ShapeData, ShapeData) {
        let pa = CreatureParams {
            around: 10,
            along: 12,
            ..Default::default()
        };
        let pb = CreatureParams {
            around: 11,
            along: 10,
            detail_seed: 8,
            ..Default::default()
        };
        let a = shapes::creature(&pa);
        let b = shapes::pose(&shapes::creature(&pb), pb.length, &Pose::random(4, 0.6));
        (ShapeData::new(&a, 12, 16).unwrap(), ShapeData::new(&b, 12, 16).unwrap())
    }

    #[test]
    fn wks_is_scale_invariant_and_positive() {
        let m = shapes::creature(&CreatureParams {
            around: 10,
            along: 10,
            ..Default::default()
        });
        let wks = |mesh: &TriMesh| {
            let ops = DifferentialOperators::new(mesh).unwrap();
            let basis = SpectralBasis::compute(&ops, 20).unwrap();
            wave_kernel_signature(&basis, ops.total_area(), 10).unwrap()
        };
        let d1 = wks(&m);
        let d2 = wks(&m.scaled(3.7).unwrap());
        assert!((&d1 - &d2).norm_max() < 1e-6 * d1.norm_max());
        assert!(d1.col_iter().all(|c| c.iter().all(|&v| v >= 0.0)));

        let s = ShapeData::new(&m, 20, 10).unwrap();
        let total: f64 = s.ops.mass().iter().sum();
        for c in s.descriptors.col_iter() {
            let mean: f64 = c.iter().zip(s.ops.mass()).map(|(v, w)| v * w).sum::<f64>() / total;
            assert!(mean.abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_soft_map_matches_dense_evaluation() {
        let mesh = shapes::creature(&CreatureParams {
            around: 10,
            along: 10,
            ..Default::default()
        });
        let s = ShapeData::new(&mesh, 12, 16).unwrap();
        let n = mesh.num_vertices();
        let feats = Mat::from_fn(n, 4, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let net = small_net();
        let st = direction_forward(&net, &s, &s, feats.as_ref(), feats.as_ref(), 6, 0.07).unwrap();
        assert!((st.soft.as_ref() - Mat::from_fn(n, n, |_, _| 1.0 / n as f64)).norm_max() < 1e-15);

        // Dense route: every soft-mapped vertex sits at the plain centroid.
        let mut centroid = Vector3::zeros();
        for p in mesh.vertices() {
            centroid += p;
        }
        centroid /= n as f64;
        for (f, t) in mesh.faces().iter().enumerate() {
            let e = frame(&centroid, &centroid, &centroid);
            let e1 = frame(&mesh.vertices()[t[0]], &mesh.vertices()[t[1]], &mesh.vertices()[t[2]]);
            let j = e1.try_inverse().unwrap() * e;
            for c in 0..9 {
                assert!((st.j_ring[(f, c)] - j[(c / 3, c % 3)]).abs() < 1e-10);
                assert!(st.j_ring[(f, c)].is_finite());
            }
        }
        let again = direction_forward(&net, &s, &s, feats.as_ref(), feats.as_ref(), 6, 0.07).unwrap();
        assert_eq!(again.j_ring, st.j_ring);
    }

    #[test]
    fn jacobian_loss_vanishes_on_consistent_field() {
        let mesh = shapes::icosphere(2);
        let ops = DifferentialOperators::new(&mesh).unwrap();
        let r = shapes::random_rotation(5);
        let field = crate::deform::JacobianField::new(vec![r; mesh.num_faces()]);
        let j = flatten(&field);
        let (t, d_hat, d_ring) = jacobian_objective(&ops, j.as_ref(), j.as_ref(), &LossWeights::default());
        assert!(t.data == 0.0 && t.smoothness < 1e-24 && t.determinant < 1e-24, "{t:?}");
        assert!(d_hat.norm_max() < 1e-10 && d_ring.norm_max() == 0.0);
        assert_eq!(t.negative_det_faces, 0);
    }

    #[test]
    fn jacobian_loss_gradient() {
        let mesh = shapes::icosphere(1);
        let ops = DifferentialOperators::new(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let nf = mesh.num_faces();
        let jh = Mat::from_fn(nf, 9, |_, _| rng.random_range(-1.0..1.0));
        let jr = Mat::from_fn(nf, 9, |_, _| rng.random_range(-1.0..1.0));
        let w = LossWeights::default();
        let (_, dh, dr) = jacobian_objective(&ops, jh.as_ref(), jr.as_ref(), &w);
        let h = 1e-6;
        for _ in 0..40 {
            let (f, c) = (rng.random_range(0..nf), rng.random_range(0..9));
            for (which, grad) in [(0, &dh), (1, &dr)] {
                let eval = |delta: f64| {
                    let (mut a, mut b) = (jh.clone(), jr.clone());
                    if which == 0 {
                        a[(f, c)] += delta;
                    } else {
                        b[(f, c)] += delta;
                    }
                    jacobian_objective(&ops, a.as_ref(), b.as_ref(), &w).0.total()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!((fd - grad[(f, c)]).abs() < 1e-5 * (1.0 + fd.abs()));
            }
        }
    }

    fn perturb(model: &mut UnsupervisedModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in model.net.mlp.params_mut() {
            *p += rng.random_range(-0.05..0.05);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (a, b) = pair();
        // Smooth activations keep central differences away from kinks.
        let cfg = UnsupervisedConfig {
            extractor_activation: Activation::Tanh,
            ..small_cfg()
        };
        let w = LossWeights::default();
        let mut net = small_net();
        net.config.activation = Activation::Tanh;
        let mut model = UnsupervisedModel::new(net, &cfg, &a, &b).unwrap();
        perturb(&mut model, 1);
        let (_, g) = unsupervised_objective(&model, &a, &b, &cfg, &w).unwrap();
        let loss = |m: &UnsupervisedModel| unsupervised_objective(m, &a, &b, &cfg, &w).unwrap().0.total();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..20 {
            let i = rng.random_range(0..model.extractor.params().len());
            let mut m = model.clone();
            m.extractor.params_mut()[i] += h;
            let up = loss(&m);
            m.extractor.params_mut()[i] -= 2.0 * h;
            let fd = (up - loss(&m)) / (2.0 * h);
            num += (fd - g.extractor[i]).powi(2);
            den += fd * fd;
        }
        for _ in 0..20 {
            let i = rng.random_range(0..model.net.mlp.params().len());
            let mut m = model.clone();
            m.net.mlp.params_mut()[i] += h;
            let up = loss(&m);
            m.net.mlp.params_mut()[i] -= 2.0 * h;
            let fd = (up - loss(&m)) / (2.0 * h);
            num += (fd - g.net[i]).powi(2);
            den += fd * fd;
        }
        for _ in 0..10 {
            let (i, j) = (rng.random_range(0..6), rng.random_range(0..6));
            for which in 0..2 {
                let mut m = model.clone();
                let c = if which == 0 { &mut m.c_ab } else { &mut m.c_ba };
                c[(i, j)] += h;
                let up = loss(&m);
                let c = if which == 0 { &mut m.c_ab } else { &mut m.c_ba };
                c[(i, j)] -= 2.0 * h;
                let fd = (up - loss(&m)) / (2.0 * h);
                let an = if which == 0 { g.c_ab[(i, j)] } else { g.c_ba[(i, j)] };
                num += (fd - an).powi(2);
                den += fd * fd;
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-4, "relative gradient error {rel}");
    }

    #[test]
    fn one_direction_changes_the_loss() {
        let (a, b) = pair();
        let cfg = small_cfg();
        let w = LossWeights::default();
        let model = UnsupervisedModel::new(small_net(), &cfg, &a, &b).unwrap();
        let both = unsupervised_objective(&model, &a, &b, &cfg, &w).unwrap().0.total();
        let one_cfg = UnsupervisedConfig {
            both_directions: false,
            ..cfg
        };
        let one = unsupervised_objective(&model, &a, &b, &one_cfg, &w).unwrap().0.total();
        assert!(one < both);
    }

    #[test]
    fn orthogonality_decreases_early() {
        let (a, b) = pair();
        let w = LossWeights::default();
        let mut good = 0;
        for seed in 0..5 {
            let cfg = UnsupervisedConfig {
                iterations: 11,
                seed,
                ..small_cfg()
            };
            let mut model = UnsupervisedModel::new(small_net(), &cfg, &a, &b).unwrap();
            let log = train_unsupervised(&mut model, &a, &b, &cfg, &w, |_, _| Ok(())).unwrap();
            if log.windows(2).all(|p| p[1].terms.orthogonality < p[0].terms.orthogonality) {
                good += 1;
            }
        }
        assert!(good >= 4, "orthogonality decreased in {good} of 5 seeds");
    }

    #[test]
    fn deterministic_training() {
        let p = CreatureParams {
            around: 10,
            along: 12,
            ..Default::default()
        };
        let rest = shapes::creature(&p);
        let posed = shapes::pose(&rest, p.length, &Pose::random(1, 0.5));
        let a = ShapeData::new(&rest, 12, 16).unwrap();
        let b = ShapeData::new(&posed, 12, 16).unwrap();
        let cfg = UnsupervisedConfig {
            iterations: 3,
            ..small_cfg()
        };
        let run = || {
            let mut m = UnsupervisedModel::new(small_net(), &cfg, &a, &b).unwrap();
            let log = train_unsupervised(&mut m, &a, &b, &cfg, &LossWeights::default(), |_, _| Ok(())).unwrap();
            (log, refined_map(&m, &a, &b, &cfg, RecoverySettings::default()).unwrap())
        };
        assert_eq!(run(), run());
    }
}
