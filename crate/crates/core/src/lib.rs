//! Controllable text-to-audio building blocks: signal features, condition
//! matrices, a desk-scale conditional latent diffusion model, evaluation
//! metrics and dataset preparation.

pub mod conditions;
pub mod dataset;
pub mod dsp;
pub mod events;
pub mod ldm;
pub mod metrics;
pub mod rng;
