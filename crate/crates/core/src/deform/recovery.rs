use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, OnceLock};

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use super::poisson::{center, pinned_cholesky, pinned_solve};
use super::JacobianField;
use crate::error::{Error, Result};
use crate::operators::DifferentialOperators;
use crate::sparse::{Cholesky, Csr};
use crate::spectral::maps::{gather_rows, validate_p2p};

/// Weights of the regularized embedding recovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySettings {
    /// Spatial weight (pull toward the mapped target positions).
    pub alpha4: f64,
    /// Jacobian-fidelity weight.
    pub alpha5: f64,
    /// Weight of the `‖V‖²_Δ` smoothness term.
    #[serde(default = "one")]
    pub smoothness: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for RecoverySettings {
    fn default() -> Self {
        Self {
            alpha4: 20000.0,
            alpha5: 150000.0,
            smoothness: 1.0,
        }
    }
}

impl RecoverySettings {
    fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.alpha4) || !ok(self.alpha5) || !ok(self.smoothness) {
            return Err(Error::InvalidArgument(format!(
                "recovery weights must be finite and nonnegative: {self:?}"
            )));
        }
        if self.alpha4 == 0.0 && self.alpha5 == 0.0 {
            return Err(Error::InvalidArgument(
                "alpha4 and alpha5 are both zero; the recovery system is singular".into(),
            ));
        }
        Ok(())
    }

    fn key(&self) -> [u64; 3] {
        [self.alpha4.to_bits(), self.alpha5.to_bits(), self.smoothness.to_bits()]
    }
}

/// Factorization of `s·Δ + α₄M + α₅ΔᵀMΔ`.
///
/// With `α₄ = 0` the operator keeps the constant nullspace; vertex 0 is then
/// pinned and the solution recentred.
#[derive(Debug)]
pub struct RecoverySolver {
    chol: Cholesky,
    pinned: bool,
    settings: RecoverySettings,
    n: usize,
}

impl RecoverySolver {
    pub fn new(ops: &DifferentialOperators, settings: RecoverySettings) -> Result<Self> {
        settings.validate()?;
        let a = Self::operator(ops, &settings);
        let pinned = settings.alpha4 == 0.0;
        let chol = if pinned {
            let components = ops.connected_components();
            if components != 1 {
                return Err(Error::Disconnected { components });
            }
            pinned_cholesky(&a)?
        } else {
            Cholesky::new(&a)?
        };
        Ok(Self {
            chol,
            pinned,
            settings,
            n: ops.num_vertices(),
        })
    }

    /// Left-hand operator of the normal equations.
    pub fn operator(ops: &DifferentialOperators, s: &RecoverySettings) -> Csr {
        let lap = ops.laplacian();
        let mass = Csr::diagonal(ops.mass());
        let bilap = lap.transpose().matmul(&lap.scale_rows(ops.mass()));
        lap.scale(s.smoothness)
            .add_scaled(&mass, s.alpha4)
            .add_scaled(&bilap, s.alpha5)
    }

    pub fn settings(&self) -> RecoverySettings {
        self.settings
    }

    /// Right-hand side `α₄ M P + α₅ ΔᵀM ∇ᵀA J` for spatial targets `P`.
    pub fn rhs(
        &self,
        ops: &DifferentialOperators,
        targets: MatRef<'_, f64>,
        field: &JacobianField,
    ) -> Result<Mat<f64>> {
        if targets.nrows() != self.n || field.len() != ops.num_faces() {
            return Err(Error::DimensionMismatch(
                "recovery inputs do not match the mesh".into(),
            ));
        }
        let s = &self.settings;
        let mut rhs = Mat::from_fn(self.n, targets.ncols(), |i, c| {
            s.alpha4 * ops.mass()[i] * targets[(i, c)]
        });
        if s.alpha5 != 0.0 {
            if !field.is_finite() {
                return Err(Error::NonFinite {
                    term: "Jacobian field".into(),
                });
            }
            let div = ops.divergence(field.to_stacked().as_ref());
            let mdiv = Mat::from_fn(div.nrows(), div.ncols(), |i, c| ops.mass()[i] * div[(i, c)]);
            let term = ops.laplacian().tmul_dense(mdiv.as_ref());
            rhs += term * faer::Scale(s.alpha5);
        }
        Ok(rhs)
    }

    pub fn solve_rhs(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        if self.pinned {
            let mut x = pinned_solve(&self.chol, rhs);
            center(&mut x);
            x
        } else {
            self.chol.solve(rhs)
        }
    }

    pub fn solve(
        &self,
        ops: &DifferentialOperators,
        targets: MatRef<'_, f64>,
        field: &JacobianField,
    ) -> Result<Mat<f64>> {
        let rhs = self.rhs(ops, targets, field)?;
        Ok(self.solve_rhs(rhs.as_ref()))
    }
}

type CacheKey = (u64, [u64; 3]);

/// Bounded cache of recovery factorizations keyed by mesh content and weights.
pub struct RecoveryCache {
    capacity: usize,
    inner: Mutex<(HashMap<CacheKey, Arc<RecoverySolver>>, VecDeque<CacheKey>)>,
}

impl RecoveryCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            inner: Mutex::new((HashMap::new(), VecDeque::new())),
        }
    }

    /// Process-wide cache used by [`recover_embedding`].
    pub fn global() -> &'static RecoveryCache {
        static CACHE: OnceLock<RecoveryCache> = OnceLock::new();
        CACHE.get_or_init(|| RecoveryCache::new(8))
    }

    pub fn get(
        &self,
        ops: &DifferentialOperators,
        settings: RecoverySettings,
    ) -> Result<Arc<RecoverySolver>> {
        let key = (ops.fingerprint(), settings.key());
        if let Some(s) = self.lock().0.get(&key) {
            return Ok(Arc::clone(s));
        }
        let solver = Arc::new(RecoverySolver::new(ops, settings)?);
        let mut guard = self.lock();
        let (map, order) = &mut *guard;
        if !map.contains_key(&key) {
            if order.len() == self.capacity {
                if let Some(old) = order.pop_front() {
                    map.remove(&old);
                }
            }
            order.push_back(key);
            map.insert(key, Arc::clone(&solver));
        }
        Ok(Arc::clone(&map[&key]))
    }

    pub fn len(&self) -> usize {
        self.lock().0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lock(
        &self,
    ) -> std::sync::MutexGuard<'_, (HashMap<CacheKey, Arc<RecoverySolver>>, VecDeque<CacheKey>)> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Recovers source-connectivity positions from a hard map to the target and
/// a predicted Jacobian field.
pub fn recover_embedding(
    ops: &DifferentialOperators,
    map: &[usize],
    v2: MatRef<'_, f64>,
    field: &JacobianField,
    settings: RecoverySettings,
) -> Result<Mat<f64>> {
    validate_p2p(map, ops.num_vertices(), v2.nrows())?;
    let solver = RecoveryCache::global().get(ops, settings)?;
    let targets = gather_rows(map, v2);
    solver.solve(ops, targets.as_ref(), field)
}
