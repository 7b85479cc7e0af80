//! Protocol configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::FslsqpConfig;
use crate::error::{invalid, Error, Result};
use crate::gp::BOConfig;
use crate::io::sha256_hex;
use crate::nn::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSizes {
    pub internal: usize,
    /// Per external cohort.
    pub external: usize,
    pub pretext: usize,
    pub pretext_seed: u64,
}

impl Default for CohortSizes {
    fn default() -> Self {
        Self { internal: 2000, external: 500, pretext: 3000, pretext_seed: 999 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub bo: BOConfig,
    /// Fine-tuning epochs per objective evaluation.
    pub epochs: usize,
    /// Training samples drawn from the full training split per evaluation.
    pub subset: usize,
    pub beta_scale: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { bo: BOConfig::default(), epochs: 1, subset: 256, beta_scale: crate::init::DEFAULT_BETA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Validation loss an initialization must reach to count as converged.
    pub target_val_loss: f64,
    pub histogram_bins: usize,
    pub scatter_cap: usize,
    /// Directional thresholds, out of the number of seeds run.
    pub min_faster_seeds: usize,
    pub min_if_better_seeds: usize,
    pub min_recall_seeds: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            target_val_loss: 0.5,
            histogram_bins: 50,
            scatter_cap: 10_000,
            min_faster_seeds: 8,
            min_if_better_seeds: 8,
            min_recall_seeds: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub cohorts: CohortSizes,
    pub train: TrainConfig,
    pub pretrain: TrainConfig,
    pub search: SearchConfig,
    pub ensemble: FslsqpConfig,
    pub agelfs: TrainConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            seeds: (1..=10).collect(),
            output_dir: PathBuf::from("weightmix-run"),
            cohorts: CohortSizes::default(),
            train: TrainConfig { max_epochs: 20, patience: 4, ..TrainConfig::default() },
            pretrain: TrainConfig { max_epochs: 30, patience: 5, rng_seed: 77, ..TrainConfig::default() },
            search: SearchConfig::default(),
            ensemble: FslsqpConfig::default(),
            agelfs: TrainConfig { max_epochs: 60, patience: 6, ..TrainConfig::default() },
            analysis: AnalysisConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return invalid("at least one seed is required");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return invalid("seeds must be distinct");
        }
        if self.cohorts.internal < 40 || self.cohorts.external < 40 || self.cohorts.pretext < 40 {
            return invalid("cohorts need at least 40 samples");
        }
        self.train.validate()?;
        self.pretrain.validate()?;
        self.agelfs.validate()?;
        self.search.bo.validate()?;
        if self.search.epochs == 0 || self.search.subset == 0 {
            return invalid("search needs at least one epoch and one sample");
        }
        if !(self.search.beta_scale >= 0.0) {
            return invalid("beta_scale must be non-negative");
        }
        if self.ensemble.restarts == 0 {
            return invalid("ensemble restarts must be positive");
        }
        if self.analysis.histogram_bins < 2 || self.analysis.scatter_cap == 0 {
            return invalid("analysis settings out of range");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering, excluding the output directory.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        Ok(sha256_hex(canonical.to_toml()?.as_bytes()))
    }
}
