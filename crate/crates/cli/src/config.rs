//! Run configuration: the training hyperparameters plus every path and
//! property setting a pipeline needs.

use std::path::{Path, PathBuf};

use cjtvae_core::chem::PropertyOracle;
use cjtvae_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ExitCode, Failure, Result, EXIT_USAGE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyEntry {
    pub name: String,
    pub oracle: PropertyOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintSettings {
    pub radius: usize,
    pub bits: usize,
}

impl Default for FingerprintSettings {
    fn default() -> Self {
        FingerprintSettings {
            radius: 2,
            bits: 2048,
        }
    }
}

fn default_test_fraction() -> f64 {
    0.1
}

fn default_checkpoint_every() -> u64 {
    100
}

/// Relative paths are resolved against the configuration file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// One SMILES per line.
    pub corpus: PathBuf,
    /// Normalized score table written by `preprocess`.
    pub scores: PathBuf,
    pub vocabulary: PathBuf,
    /// Directory for stage checkpoints.
    pub checkpoints: PathBuf,
    /// Directory for logs and generated records.
    pub output: PathBuf,
    /// One entry per property dimension, in `c` order.
    pub properties: Vec<PropertyEntry>,
    #[serde(default)]
    pub fingerprint: FingerprintSettings,
    /// Share of molecules held out by hash of their canonical SMILES.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Training steps between checkpoints.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.corpus,
            &mut cfg.scores,
            &mut cfg.vocabulary,
            &mut cfg.checkpoints,
            &mut cfg.output,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().exit(EXIT_USAGE)?;
        if self.properties.is_empty() {
            return Err(Failure::usage("at least one property is required"));
        }
        if self.properties.len() != self.train.prop_dim {
            return Err(Failure::usage(format!(
                "{} properties configured but train.prop_dim is {}",
                self.properties.len(),
                self.train.prop_dim
            )));
        }
        let mut names: Vec<&str> = self.properties.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Failure::usage("property names must be distinct"));
        }
        if self
            .properties
            .iter()
            .any(|p| p.name.is_empty() || p.name.contains(['\t', '\n', ',']))
        {
            return Err(Failure::usage(
                "property names must be non-empty without tabs, commas or newlines",
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Failure::usage("test_fraction must be in [0, 1)"));
        }
        if self.checkpoint_every == 0 {
            return Err(Failure::usage("checkpoint_every must be >= 1"));
        }
        if self.fingerprint.bits == 0 {
            return Err(Failure::usage("fingerprint.bits must be >= 1"));
        }
        Ok(())
    }

    pub fn property_names(&self) -> Vec<String> {
        self.properties.iter().map(|p| p.name.clone()).collect()
    }

    /// Whether a molecule belongs to the held-out split.
    pub fn is_held_out(&self, canonical: &str) -> bool {
        split_point(canonical) < self.test_fraction
    }
}

/// Uniform position in `[0, 1)` from the SHA-256 of a canonical SMILES.
pub fn split_point(canonical: &str) -> f64 {
    let d = Sha256::digest(canonical.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    (u64::from_be_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

/// Fails with the usage exit code when a required input is missing.
pub fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}
