//! Toy model configuration, read from a TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LdmError, Result};

/// Architecture, schedule and seed. Checkpoints are bound to a digest of this section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub seed: u64,
    pub latent_t: usize,
    pub latent_f: usize,
    pub mel_bins: usize,
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub text_dim: usize,
    pub max_text_tokens: usize,
    pub n_layers: usize,
    pub strides: Vec<usize>,
    pub cond_len: usize,
    /// Amplitude of the time code added to control tokens before fusion.
    pub control_position_scale: f64,
    pub n_bins: usize,
    pub label_dim: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Data scale assumed by the output preconditioning.
    pub sigma_data: f64,
    /// Unconditional branch drops the caption as well as the control.
    pub drop_both: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            latent_t: 64,
            latent_f: 16,
            mel_bins: 64,
            hidden: 32,
            ffn_hidden: 64,
            text_dim: 32,
            max_text_tokens: 16,
            n_layers: 3,
            strides: vec![2, 4, 8],
            cond_len: 64,
            control_position_scale: 4.0,
            n_bins: 256,
            label_dim: 32,
            diffusion_steps: 200,
            beta_start: 1e-4,
            beta_end: 2e-2,
            sigma_data: 1.0,
            drop_both: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub guidance_dropout: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 16,
            learning_rate: 0.5,
            momentum: 0.9,
            guidance_dropout: 0.1,
            grad_clip: 1.0,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub n_classes: usize,
    pub train_pool: usize,
    pub eval_samples: usize,
    pub sample_steps: usize,
    pub omega: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { n_classes: 2, train_pool: 256, eval_samples: 8, sample_steps: 50, omega: 5.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LdmError::Config(m));
        let positive = [
            ("latent_t", self.latent_t),
            ("latent_f", self.latent_f),
            ("hidden", self.hidden),
            ("ffn_hidden", self.ffn_hidden),
            ("text_dim", self.text_dim),
            ("max_text_tokens", self.max_text_tokens),
            ("n_layers", self.n_layers),
            ("cond_len", self.cond_len),
            ("label_dim", self.label_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.hidden.is_multiple_of(2) {
            return bad(format!("hidden must be even, got {}", self.hidden));
        }
        if self.mel_bins < self.latent_f {
            return bad(format!("mel_bins {} smaller than latent_f {}", self.mel_bins, self.latent_f));
        }
        if self.strides.len() != self.n_layers {
            return bad(format!("{} strides for {} layers", self.strides.len(), self.n_layers));
        }
        if self.strides.contains(&0) {
            return bad("strides must be positive".into());
        }
        if self.n_bins < 2 {
            return bad(format!("n_bins must be at least 2, got {}", self.n_bins));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return bad(format!("sigma_data must be positive, got {}", self.sigma_data));
        }
        super::DiffusionSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).into()
    }
}

impl ToyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(LdmError::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&t.guidance_dropout) {
            return Err(LdmError::Config(format!("guidance_dropout {} outside [0, 1]", t.guidance_dropout)));
        }
        if !(t.learning_rate >= 0.0 && (0.0..1.0).contains(&t.momentum) && t.grad_clip >= 0.0) {
            return Err(LdmError::Config("learning_rate, momentum or grad_clip out of range".into()));
        }
        let p = &self.probe;
        if p.n_classes == 0 || p.n_classes + 2 > self.model.latent_f {
            return Err(LdmError::Config(format!(
                "probe needs 1 <= n_classes <= latent_f - 2, got {}",
                p.n_classes
            )));
        }
        if p.train_pool == 0 || p.eval_samples < 2 {
            return Err(LdmError::Config("probe needs a nonempty pool and at least 2 eval samples".into()));
        }
        Ok(())
    }
}
