//! Laplace–Beltrami eigenbases and spectral projection.
//!
//! The generalized problem `ΔΨ = MΨΛ` is reduced to the symmetric
//! `M^{-1/2} Δ M^{-1/2}` (M is diagonal). Small meshes are solved densely;
//! larger ones by shift-inverted subspace iteration with Rayleigh–Ritz.

pub mod maps;

use std::io::{Read, Write};
use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::operators::DifferentialOperators;
use crate::sparse::{Cholesky, Csr};

/// Largest vertex count solved with the dense eigensolver.
pub const DENSE_LIMIT: usize = 2500;

/// Default truncation for coordinate projection.
pub const K_COORD: usize = 40;
/// Default truncation for feature smoothing.
pub const K_FEAT: usize = 128;

const MAGIC: &[u8; 8] = b"DKBASIS1";

/// First `k` eigenpairs, mass-orthonormal (`ΨᵀMΨ = I`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    evecs: Mat<f64>,
    evals: Vec<f64>,
    mass: Vec<f64>,
}

impl SpectralBasis {
    pub fn compute(ops: &DifferentialOperators, k: usize) -> Result<Self> {
        let n = ops.num_vertices();
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!(
                "eigenbasis size {k} must be in 1..={n}"
            )));
        }
        let mass = ops.mass().to_vec();
        let inv_sqrt: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
        let (mut evals, y) = if n <= DENSE_LIMIT {
            dense_eigen(ops.laplacian(), &inv_sqrt, k)?
        } else {
            iterative_eigen(ops.laplacian(), &mass, &inv_sqrt, k)?
        };
        let mut evecs = Mat::from_fn(n, k, |i, j| y[(i, j)] * inv_sqrt[i]);
        fix_signs(&mut evecs);
        // Eigenvalues below rounding level of the spectrum are the constant
        // mode (or numerical noise around it).
        let trace: f64 = (0..n)
            .map(|i| ops.laplacian().get(i, i) * inv_sqrt[i] * inv_sqrt[i])
            .sum();
        for l in &mut evals {
            if *l < 1e-12 * trace {
                *l = 0.0;
            }
        }
        for w in evals.windows(2) {
            if w[1] > 0.0 && (w[1] - w[0]) / w[1] < 1e-6 {
                log::debug!("near-degenerate eigenvalues {} and {}", w[0], w[1]);
            }
        }
        Ok(Self { evecs, evals, mass })
    }

    pub fn k(&self) -> usize {
        self.evals.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.evecs.nrows()
    }

    /// `|V| × k` eigenvector matrix Ψ.
    pub fn evecs(&self) -> MatRef<'_, f64> {
        self.evecs.as_ref()
    }

    pub fn evals(&self) -> &[f64] {
        &self.evals
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Leading `k` columns as a new basis.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a {}-basis to {k}",
                self.k()
            )));
        }
        Ok(Self {
            evecs: self.evecs.subcols(0, k).to_owned(),
            evals: self.evals[..k].to_vec(),
            mass: self.mass.clone(),
        })
    }

    /// Leading `k` columns of Ψ without copying.
    pub fn columns(&self, k: usize) -> MatRef<'_, f64> {
        self.evecs.subcols(0, k)
    }

    /// Spectral coefficients `ΨᵀM x`.
    pub fn analyze(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.analyze_k(x, self.k())
    }

    pub fn analyze_k(&self, x: MatRef<'_, f64>, k: usize) -> Result<Mat<f64>> {
        self.check_rows(x)?;
        let mx = Mat::from_fn(x.nrows(), x.ncols(), |i, j| self.mass[i] * x[(i, j)]);
        let mut out = Mat::zeros(k, x.ncols());
        matmul(out.as_mut(), Accum::Replace, self.columns(k).transpose(), mx.as_ref(), 1.0, Par::Seq);
        Ok(out)
    }

    /// Spectral projection `ΨΨᵀM x`.
    pub fn project(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.project_k(x, self.k())
    }

    /// Projection onto the leading `k` eigenfunctions.
    pub fn project_k(&self, x: MatRef<'_, f64>, k: usize) -> Result<Mat<f64>> {
        if k == 0 || k > self.k() {
            return Err(Error::InvalidArgument(format!(
                "projection order {k} exceeds basis size {}",
                self.k()
            )));
        }
        let coeffs = self.analyze_k(x, k)?;
        let mut out = Mat::zeros(x.nrows(), x.ncols());
        matmul(out.as_mut(), Accum::Replace, self.columns(k), coeffs.as_ref(), 1.0, Par::Seq);
        Ok(out)
    }

    /// Adjoint of [`Self::project_k`] in the Euclidean inner product, `MΨΨᵀ g`.
    pub fn project_k_adjoint(&self, g: MatRef<'_, f64>, k: usize) -> Mat<f64> {
        let psi = self.columns(k);
        let mut coeffs = Mat::zeros(k, g.ncols());
        matmul(coeffs.as_mut(), Accum::Replace, psi.transpose(), g, 1.0, Par::Seq);
        let mut out = Mat::zeros(g.nrows(), g.ncols());
        matmul(out.as_mut(), Accum::Replace, psi, coeffs.as_ref(), 1.0, Par::Seq);
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(i, j)] *= self.mass[i];
            }
        }
        out
    }

    fn check_rows(&self, x: MatRef<'_, f64>) -> Result<()> {
        if x.nrows() != self.num_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} rows, basis has {} vertices",
                x.nrows(),
                self.num_vertices()
            )));
        }
        Ok(())
    }

    /// Binary checkpoint: magic, `k`, `|V|` (u64 LE), eigenvalues, mass, then
    /// Ψ row-major, all f64 LE.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.k() as u64).to_le_bytes())?;
        w.write_all(&(self.num_vertices() as u64).to_le_bytes())?;
        for v in self.evals.iter().chain(&self.mass) {
            w.write_all(&v.to_le_bytes())?;
        }
        for i in 0..self.num_vertices() {
            for j in 0..self.k() {
                w.write_all(&self.evecs[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("eigenbasis: {m}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let read_u64 = |r: &mut dyn Read| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            Ok(u64::from_le_bytes(b))
        };
        let k = read_u64(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        if k == 0 || k > n {
            return Err(bad("inconsistent sizes"));
        }
        let mut buf = vec![0u8; 8 * (k + n + n * k)];
        r.read_exact(&mut buf).map_err(|_| bad("truncated payload"))?;
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let evals = vals[..k].to_vec();
        let mass = vals[k..k + n].to_vec();
        let evecs = Mat::from_fn(n, k, |i, j| vals[k + n + i * k + j]);
        Ok(Self { evecs, evals, mass })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Sign convention: the largest-magnitude entry of every column is positive
/// (ties resolved by the lowest row index).
pub fn fix_signs(evecs: &mut Mat<f64>) {
    for j in 0..evecs.ncols() {
        let mut best = 0;
        for i in 1..evecs.nrows() {
            if evecs[(i, j)].abs() > evecs[(best, j)].abs() {
                best = i;
            }
        }
        if evecs[(best, j)] < 0.0 {
            for i in 0..evecs.nrows() {
                evecs[(i, j)] = -evecs[(i, j)];
            }
        }
    }
}

fn dense_eigen(lap: &Csr, inv_sqrt: &[f64], k: usize) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = lap.nrows();
    let mut s = Mat::<f64>::zeros(n, n);
    for r in 0..n {
        for (c, v) in lap.row(r) {
            s[(r, c)] = v * inv_sqrt[r] * inv_sqrt[c];
        }
    }
    let eig = s
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::EigenSolver(format!("{e:?}")))?;
    let vals = eig.S().column_vector();
    let evals = (0..k).map(|i| vals[i]).collect();
    Ok((evals, eig.U().subcols(0, k).to_owned()))
}

/// `S = M^{-1/2} Δ M^{-1/2}` and the shift-inverted `(S + εI)^{-1}`.
struct ShiftInvert<'a> {
    lap: &'a Csr,
    inv_sqrt: &'a [f64],
    sqrt_m: Vec<f64>,
    chol: Cholesky,
    /// Relative floor for residual tests near the zero eigenvalue.
    floor: f64,
}

impl<'a> ShiftInvert<'a> {
    fn new(lap: &'a Csr, mass: &[f64], inv_sqrt: &'a [f64]) -> Result<Self> {
        let n = lap.nrows();
        let trace: f64 = (0..n).map(|i| lap.get(i, i) * inv_sqrt[i] * inv_sqrt[i]).sum();
        let shift = 1e-8 * trace / n as f64;
        let chol = Cholesky::new(&lap.add_scaled(&Csr::diagonal(mass), shift))?;
        Ok(Self {
            lap,
            inv_sqrt,
            sqrt_m: mass.iter().map(|m| m.sqrt()).collect(),
            chol,
            floor: 1e-4 * trace / n as f64,
        })
    }

    fn n(&self) -> usize {
        self.lap.nrows()
    }

    fn apply_s(&self, y: MatRef<'_, f64>) -> Mat<f64> {
        let n = self.n();
        let x = Mat::from_fn(n, y.ncols(), |i, j| y[(i, j)] * self.inv_sqrt[i]);
        let lx = self.lap.mul_dense(x.as_ref());
        Mat::from_fn(n, y.ncols(), |i, j| lx[(i, j)] * self.inv_sqrt[i])
    }

    /// `M^{1/2} (Δ + εM)^{-1} M^{1/2} y`.
    fn apply_inverse(&self, y: MatRef<'_, f64>) -> Mat<f64> {
        let n = self.n();
        let b = Mat::from_fn(n, y.ncols(), |i, j| y[(i, j)] * self.sqrt_m[i]);
        let x = self.chol.solve(b.as_ref());
        Mat::from_fn(n, y.ncols(), |i, j| x[(i, j)] * self.sqrt_m[i])
    }

    /// Rayleigh–Ritz of `S` on the orthonormal columns of `q`. Returns the
    /// lowest `k` Ritz pairs, all Ritz vectors, and the worst relative
    /// residual among the first `k`.
    fn rayleigh_ritz(&self, q: MatRef<'_, f64>, k: usize) -> Result<(Vec<f64>, Mat<f64>, f64)> {
        let (n, p) = (q.nrows(), q.ncols());
        let sq = self.apply_s(q);
        let mut t = Mat::zeros(p, p);
        matmul(t.as_mut(), Accum::Replace, q.transpose(), sq.as_ref(), 1.0, Par::Seq);
        let t = Mat::from_fn(p, p, |i, j| 0.5 * (t[(i, j)] + t[(j, i)]));
        let eig = t
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::EigenSolver(format!("{e:?}")))?;
        let mut ritz = Mat::zeros(n, p);
        matmul(ritz.as_mut(), Accum::Replace, q, eig.U(), 1.0, Par::Seq);
        // S·ritz = sq·U, so residuals need no further operator applications.
        let mut s_ritz = Mat::zeros(n, k);
        matmul(s_ritz.as_mut(), Accum::Replace, sq.as_ref(), eig.U().subcols(0, k), 1.0, Par::Seq);
        let vals: Vec<f64> = (0..p).map(|j| eig.S().column_vector()[j]).collect();
        let mut worst = 0.0f64;
        for j in 0..k {
            let r: f64 = (0..n)
                .map(|i| (s_ritz[(i, j)] - vals[j] * ritz[(i, j)]).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(r / (vals[j].abs() + self.floor));
        }
        Ok((vals, ritz, worst))
    }
}

/// Residual tolerance of the iterative eigensolvers, relative to `|λ|`.
const EIGEN_TOL: f64 = 1e-9;

/// Smallest `k` eigenpairs of `S = M^{-1/2} Δ M^{-1/2}` by subspace
/// iteration on the shift-inverted operator from a seeded random block.
fn iterative_eigen(
    lap: &Csr,
    mass: &[f64],
    inv_sqrt: &[f64],
    k: usize,
) -> Result<(Vec<f64>, Mat<f64>)> {
    let op = ShiftInvert::new(lap, mass, inv_sqrt)?;
    let n = op.n();
    let p = (k + k / 2).max(k + 8).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start = Mat::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    subspace_iteration(&op, k, start)
}

/// Subspace iteration on `(S + εI)^{-1}` with Rayleigh–Ritz.
fn subspace_iteration(op: &ShiftInvert<'_>, k: usize, start: Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    const MAX_ITERS: usize = 600;
    let mut y = start.qr().compute_thin_Q();
    for iter in 0..MAX_ITERS {
        let z = op.apply_inverse(y.as_ref());
        let q = z.qr().compute_thin_Q();
        let (vals, ritz, worst) = op.rayleigh_ritz(q.as_ref(), k)?;
        y = ritz;
        if worst < EIGEN_TOL {
            log::debug!("subspace iteration converged after {} sweeps", iter + 1);
            return Ok((vals[..k].to_vec(), y.subcols(0, k).to_owned()));
        }
    }
    Err(Error::EigenSolver(format!(
        "subspace iteration did not converge in {MAX_ITERS} sweeps"
    )))
}
