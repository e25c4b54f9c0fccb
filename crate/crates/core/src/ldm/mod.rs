//! Desk-scale conditional latent diffusion.
//!
//! A frozen toy denoiser is extended with a trainable control-condition
//! encoder and zero-gated fusion blocks. Training minimizes the usual
//! noise-prediction MSE; sampling runs DDIM with classifier-free guidance.

mod checkpoint;
mod config;
mod model;
mod params;
pub mod probe;
mod sample;
mod schedule;
pub mod tape;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{ModelConfig, ProbeConfig, ToyConfig, TrainConfig};
pub use model::{
    fusion_forward, pair_rotation, position_encoding, timestep_embedding, ControlCond, ControlEmbedding, ControlInput, ControlKind,
    ControlTokenSet, FusionParams, LatentMel, TextCond, TextEmbedding, ToyModel,
};
pub use params::{Param, ParamId, ParamStore, Role};
pub use sample::{cfg_combine, ddim_timesteps, sample};
pub use schedule::{forward_diffuse, DiffusionSchedule};
pub use train::{guidance_dropout, ldm_loss, loss_and_gradients, train_step, DropMode, Optimizer, TrainItem};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LdmError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("diffusion step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("unknown control type {0:?}")]
    UnknownControlType(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("sampler divergence at step {step}: {detail}")]
    SamplerDivergence { step: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint was written for config digest {found}, expected {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error(transparent)]
    Condition(#[from] crate::conditions::ConditionError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LdmError>;
