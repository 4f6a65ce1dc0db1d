//! Supervised training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::signal::SignalMode;
use super::supervised::{supervised_loss_and_grad, LossTerms, TrainSample};
use super::{Ljn, LossWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Truncation orders the input signal is drawn from, per sample and epoch.
    pub k_choices: Vec<usize>,
    /// Pairs whose gradients are averaged into one optimizer step.
    pub accumulate: usize,
    /// Weight the vertex term by the lumped mass instead of uniformly.
    pub mass_weighted_vertices: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr_start: 1e-3,
            lr_end: 1e-5,
            k_choices: vec![20, 30, 40, 50, 60],
            accumulate: 1,
            mass_weighted_vertices: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.accumulate == 0 {
            return Err(Error::InvalidArgument("epochs and accumulate must be positive".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.k_choices.is_empty() || self.k_choices.contains(&0) {
            return Err(Error::InvalidArgument("k_choices must be nonempty and positive".into()));
        }
        Ok(())
    }

    /// Geometric decay from `lr_start` at epoch 0 to `lr_end` at the last epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample loss terms, evaluated before each update.
    pub terms: LossTerms,
    pub total: f64,
    /// `(sample name, k)` in visiting order; `k = 0` in rotation mode.
    pub ks: Vec<(String, usize)>,
}

/// Trains `net` in place. `on_epoch` runs after every completed epoch and
/// usually persists a checkpoint; a non-finite loss aborts with an error and
/// leaves the last callback's state as the last good one.
pub fn train_supervised(
    net: &mut Ljn,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    weights: &LossWeights,
    adam: &mut Adam,
    mut on_epoch: impl FnMut(&EpochRecord, &Ljn, &Adam) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let np = net.mlp.params().len();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut terms = LossTerms::default();
        let mut ks = Vec::with_capacity(samples.len());
        let mut acc = vec![0.0; np];
        let mut pending = 0usize;
        for (visited, &i) in order.iter().enumerate() {
            let s = &samples[i];
            let k = match s.mode {
                SignalMode::Spectral => cfg.k_choices[rng.random_range(0..cfg.k_choices.len())],
                SignalMode::Rotation => 0,
            };
            ks.push((s.name.clone(), k));
            let theta = s.signal(k)?;
            let (t, g) = supervised_loss_and_grad(net, s, theta.as_ref(), weights, cfg.mass_weighted_vertices)?;
            terms.add(&t);
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
            pending += 1;
            if pending == cfg.accumulate || visited + 1 == order.len() {
                let inv = 1.0 / pending as f64;
                acc.iter_mut().for_each(|a| *a *= inv);
                adam.step(net.mlp.params_mut(), &acc, lr);
                acc.iter_mut().for_each(|a| *a = 0.0);
                pending = 0;
                if !net.mlp.is_finite() {
                    return Err(Error::NonFinite {
                        term: "network parameters".into(),
                    });
                }
            }
        }
        let inv = 1.0 / samples.len() as f64;
        let terms = LossTerms {
            jacobian: terms.jacobian * inv,
            vertex: terms.vertex * inv,
            integrated: terms.integrated * inv,
        };
        let rec = EpochRecord {
            epoch,
            lr,
            total: terms.total(),
            terms,
            ks,
        };
        log::info!("epoch {epoch}: loss {:.6e} (lr {lr:.3e})", rec.total);
        on_epoch(&rec, net, adam)?;
        log.push(rec);
    }
    Ok(log)
}
