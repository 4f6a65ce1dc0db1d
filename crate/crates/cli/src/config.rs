//! Run configuration: every tunable in one TOML document.

use std::path::Path;

use anyhow::{Context, Result};
use deformkit::deform::RecoverySettings;
use deformkit::editing::EditConfig;
use deformkit::experiments::TessellationConfig;
use deformkit::net::train::TrainConfig;
use deformkit::net::unsupervised::UnsupervisedConfig;
use deformkit::net::{LossWeights, NetworkConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed. Every component seed is derived from it.
    pub seed: u64,
    /// Truncation order for refinement and deformation.
    pub k: usize,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub unsupervised: UnsupervisedConfig,
    pub recovery: RecoverySettings,
    pub edit: EditConfig,
    pub tessellation: TessellationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 40,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            unsupervised: UnsupervisedConfig::default(),
            recovery: RecoverySettings::default(),
            edit: EditConfig::default(),
            tessellation: TessellationConfig::default(),
        }
        .seeded(0)
    }
}

impl RunConfig {
    /// Sets the root seed and the component seeds derived from it.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.network.seed = seed;
        self.train.seed = seed.wrapping_add(1);
        self.unsupervised.seed = seed.wrapping_add(2);
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid run configuration")?;
        let seed = cfg.seed;
        let cfg = cfg.seeded(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Loads `path` or the defaults, then applies a seed override.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        Ok(match seed {
            Some(s) => cfg.seeded(s),
            None => cfg,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        anyhow::ensure!(self.k > 0, "k must be positive");
        self.network.validate()?;
        self.train.validate()?;
        self.unsupervised.validate()?;
        self.edit.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_constants() {
        let c = RunConfig::default();
        assert_eq!(c.network.hidden, vec![256; 5]);
        assert_eq!((c.network.k_feat, c.network.k_coord), (128, 40));
        assert_eq!((c.weights.alpha1, c.weights.alpha2, c.weights.alpha3), (1.0, 10.0, 2.0));
        assert_eq!((c.weights.alpha6, c.weights.alpha7), (20.0, 10.0));
        assert_eq!((c.recovery.alpha4, c.recovery.alpha5), (20000.0, 150000.0));
        assert_eq!((c.train.epochs, c.train.lr_start, c.train.lr_end), (50, 1e-3, 1e-5));
        assert_eq!(c.train.k_choices, vec![20, 30, 40, 50, 60]);
    }

    #[test]
    fn dump_then_load_is_identity() {
        for cfg in [RunConfig::default(), RunConfig::default().seeded(17)] {
            assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
        let mut c = RunConfig {
            k: 25,
            ..Default::default()
        };
        c.train.epochs = 3;
        c.edit.alpha4 = 5.0;
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_documents_and_unknown_keys() {
        let c = RunConfig::from_toml("seed = 5\n[train]\nepochs = 7\n").unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.network.seed, 5);
        assert_eq!(c.train.k_choices, TrainConfig::default().k_choices);
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
        assert!(RunConfig::from_toml("[train]\nepoch = 7\n").is_err());
        assert!(RunConfig::from_toml("k = 0\n").is_err());
    }
}
