use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyOption {
    None,
    /// Property consistency through the frozen extractor.
    I,
    /// Latent consistency through the tree encoder.
    Ii,
    Both,
}

impl ConsistencyOption {
    pub fn uses_property(self) -> bool {
        matches!(self, ConsistencyOption::I | ConsistencyOption::Both)
    }

    pub fn uses_latent(self) -> bool {
        matches!(self, ConsistencyOption::Ii | ConsistencyOption::Both)
    }
}

/// Which `c` the consistency pass decodes under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyTarget {
    /// Uniform on `[0, 1]^d`, fresh per molecule and step.
    Sampled,
    /// The molecule's own property vector.
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Joint-loop epochs `K`.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_extractor: f64,
    pub lr_vae: f64,
    pub lr_joint: f64,
    /// KL weight reached at the end of warm-up.
    pub beta_kl: f64,
    /// Fraction of `vae_steps` over which the KL weight ramps up from 0.
    pub kl_warmup: f64,
    pub option: ConsistencyOption,
    pub lambda: f64,
    pub consistency_target: ConsistencyTarget,
    /// Alternate VAE and consistency steps instead of running both per batch.
    pub alternate: bool,
    pub seed: u64,
    pub prop_dim: usize,
    pub latent: usize,
    pub hidden: usize,
    /// Graph message-passing iterations `T`.
    pub depth: usize,
    pub max_nodes: usize,
    pub extractor_steps: u64,
    pub vae_steps: u64,
    /// Steps between convergence evaluations.
    pub eval_every: u64,
    /// Evaluations in the convergence window; 0 disables the rule.
    pub convergence_window: usize,
    pub convergence_tol: f64,
    /// Worker threads for per-molecule passes; 0 = all cores.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr_extractor: 1e-3,
            lr_vae: 1e-3,
            lr_joint: 1e-3,
            beta_kl: 0.005,
            kl_warmup: 0.2,
            option: ConsistencyOption::I,
            lambda: 1.0,
            consistency_target: ConsistencyTarget::Sampled,
            alternate: false,
            seed: 0,
            prop_dim: 1,
            latent: 16,
            hidden: 64,
            depth: 3,
            max_nodes: 30,
            extractor_steps: 2000,
            vae_steps: 2000,
            eval_every: 10,
            convergence_window: 10,
            convergence_tol: 1e-4,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and >= 0");
        }
        if self.prop_dim == 0 {
            return bad("prop_dim must be >= 1");
        }
        if self.latent == 0 || self.hidden == 0 || self.depth == 0 {
            return bad("latent, hidden and depth must be >= 1");
        }
        if self.max_nodes == 0 {
            return bad("max_nodes must be >= 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1");
        }
        for (name, lr) in [
            ("lr_extractor", self.lr_extractor),
            ("lr_vae", self.lr_vae),
            ("lr_joint", self.lr_joint),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(TrainError::Config(format!("{name} must be finite and > 0")));
            }
        }
        if !(self.beta_kl >= 0.0) || !(0.0..=1.0).contains(&self.kl_warmup) {
            return bad("beta_kl must be >= 0 and kl_warmup in [0, 1]");
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            hidden: self.hidden,
            latent: self.latent,
            depth: self.depth,
            prop_dim: self.prop_dim,
        }
    }

    /// KL weight at VAE step `s`: linear ramp, then constant.
    pub fn beta_at(&self, s: u64) -> f64 {
        let ramp = (self.kl_warmup * self.vae_steps as f64).round();
        if ramp <= 0.0 || s as f64 >= ramp {
            self.beta_kl
        } else {
            self.beta_kl * s as f64 / ramp
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
        let partial: TrainConfig =
            serde_json::from_str(r#"{"lambda": 0.0, "option": "ii"}"#).unwrap();
        assert_eq!(partial.option, ConsistencyOption::Ii);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lambada": 1}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        c.batch_size = 4;
        c.lambda = -1.0;
        assert!(c.validate().is_err());
        c.lambda = f64::NAN;
        assert!(c.validate().is_err());
    }

    #[test]
    fn warmup_ramps_over_first_fifth() {
        let c = TrainConfig {
            vae_steps: 100,
            beta_kl: 0.5,
            ..TrainConfig::default()
        };
        assert_eq!(c.beta_at(0), 0.0);
        assert_eq!(c.beta_at(10), 0.25);
        assert_eq!(c.beta_at(20), 0.5);
        assert_eq!(c.beta_at(1000), 0.5);
    }
}
