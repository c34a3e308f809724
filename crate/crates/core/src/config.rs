//! Experiment configuration: one TOML document describing the dataset,
//! split, model, training phases, attack protocol, and sweep grid.
//!
//! Two content digests are derived from the *parsed* structure (so key
//! order in the file never matters):
//! - [`ExperimentConfig::digest`] covers the whole document and names a
//!   run's outputs;
//! - [`ExperimentConfig::pretrain_digest`] covers only the fields the
//!   original model depends on (dataset, model geometry, pretraining),
//!   so runs that differ only in split, unlearning settings or sweep
//!   grid share cached originals.

use crate::attack::AttackConfig;
use crate::baselines::FitConfig;
use crate::data::{SplitSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::unlearn::UnlearnConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Classifier geometry: hidden ReLU widths between input and logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { hidden: vec![32] }
    }
}

/// The robustness grid: forget fractions × ascent weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub fractions: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            fractions: vec![0.03, 0.15, 0.30],
            alphas: vec![0.05, 0.25, 0.5, 0.9],
        }
    }
}

fn default_split() -> SplitSpec {
    SplitSpec::RandomSubset { fraction: 0.15 }
}

/// Everything one experiment needs, with defaults for every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub model: ModelSpec,
    pub dataset: SyntheticSpec,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    pub pretrain: FitConfig,
    pub unlearn: UnlearnConfig,
    pub attack: AttackConfig,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("runs"),
            cache_dir: PathBuf::from("cache"),
            seeds: vec![0, 1, 2],
            model: ModelSpec::default(),
            dataset: SyntheticSpec::default(),
            split: default_split(),
            pretrain: FitConfig::default(),
            unlearn: UnlearnConfig::default(),
            attack: AttackConfig::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// The pretraining-relevant slice of a config, hashed separately.
#[derive(Serialize)]
struct PretrainKey<'a> {
    dataset: &'a SyntheticSpec,
    model: &'a ModelSpec,
    pretrain: &'a FitConfig,
}

impl ExperimentConfig {
    /// Parse and validate a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.seeds {
            if !seen.insert(*s) {
                return Err(Error::Config(format!("duplicate seed {s}")));
            }
        }
        if self.sweep.fractions.is_empty() || self.sweep.alphas.is_empty() {
            return Err(Error::Config("sweep grid must not be empty".into()));
        }
        for f in &self.sweep.fractions {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::Config(format!(
                    "sweep fraction {f} outside (0, 1)"
                )));
            }
        }
        for a in &self.sweep.alphas {
            if !(*a >= 0.0 && *a <= 1.0) {
                return Err(Error::Config(format!("sweep alpha {a} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Digest of the full parsed config.
    pub fn digest(&self) -> [u8; 32] {
        digest_of(self)
    }

    /// Digest of only the fields the original model depends on.
    pub fn pretrain_digest(&self) -> [u8; 32] {
        digest_of(&PretrainKey {
            dataset: &self.dataset,
            model: &self.model,
            pretrain: &self.pretrain,
        })
    }
}

/// Canonical content digest: SHA-256 over the JSON serialization of the
/// parsed value. Struct fields serialize in a fixed order, so the result
/// depends only on the values, never on document layout.
fn digest_of<T: Serialize>(value: &T) -> [u8; 32] {
    let bytes = serde_json::to_vec(value).expect("config serialization cannot fail");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hasher.finalize().into()
}

/// Lowercase hex of a digest, used for cache directory names.
pub fn hex_digest(digest: &[u8; 32]) -> String {
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
