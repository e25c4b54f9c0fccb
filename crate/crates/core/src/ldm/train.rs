//! Noise-prediction loss, guidance dropout and the gradient step.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use super::model::{ControlInput, LatentMel, TextEmbedding, ToyModel};
use super::params::{ParamId, Role};
use super::tape::{Gradients, Tape};
use super::{LdmError, Result};

/// One training example with its diffusion step and noise draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub x0: LatentMel,
    pub t: usize,
    pub noise: LatentMel,
    /// `None` selects the learned null caption.
    pub text: Option<TextEmbedding>,
    /// `None` selects the learned null control.
    pub control: Option<ControlInput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropMode {
    Both,
    ControlOnly,
}

/// Independently replaces each item's conditions by the null condition with probability `p`.
pub fn guidance_dropout(
    mut batch: Vec<TrainItem>,
    p: f64,
    mode: DropMode,
    rng: &mut impl Rng,
) -> Result<Vec<TrainItem>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(LdmError::Config(format!("dropout probability {p} outside [0, 1]")));
    }
    for item in &mut batch {
        if rng.random::<f64>() < p {
            item.control = None;
            if mode == DropMode::Both {
                item.text = None;
            }
        }
    }
    Ok(batch)
}

/// Mean squared error between predicted and true noise.
pub fn ldm_loss(
    model: &ToyModel,
    x0: &LatentMel,
    t: usize,
    noise: &LatentMel,
    text: Option<&TextEmbedding>,
    control: Option<&ControlInput>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, false);
    let l = model.loss_var(&mut tape, &b, x0, t, noise, text, control)?;
    Ok(tape.scalar(l))
}

/// Batch-mean loss and its gradient with respect to every trainable parameter.
pub fn loss_and_gradients(model: &ToyModel, batch: &[TrainItem]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(LdmError::Config("empty batch".into()));
    }
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, true);
    let mut total = None;
    for item in batch {
        let l = model.loss_var(&mut tape, &b, &item.x0, item.t, &item.noise, item.text.as_ref(), item.control.as_ref())?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l),
        });
    }
    let mean = tape.scale(total.expect("nonempty batch"), 1.0 / batch.len() as f64);
    let loss = tape.scalar(mean);
    Ok((loss, tape.backward(mean)))
}

/// Gradient descent with heavy-ball momentum and optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub momentum: f64,
    pub grad_clip: f64,
    velocity: BTreeMap<ParamId, Array2<f64>>,
}

impl Optimizer {
    pub fn new(momentum: f64, grad_clip: f64) -> Self {
        Self { momentum, grad_clip, velocity: BTreeMap::new() }
    }

    pub fn sgd() -> Self {
        Self::new(0.0, 0.0)
    }
}

/// Computes the batch loss, updates trainable parameters only, and returns the pre-update loss.
pub fn train_step(model: &mut ToyModel, opt: &mut Optimizer, batch: &[TrainItem], learning_rate: f64) -> Result<f64> {
    let (loss, grads) = loss_and_gradients(model, batch)?;
    let norm = grads.by_param.iter().map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if !loss.is_finite() || !norm.is_finite() {
        let max_param = model
            .params()
            .iter()
            .filter(|(_, p)| p.role == Role::Trainable)
            .flat_map(|(_, p)| p.value.iter().copied().collect::<Vec<_>>())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        return Err(LdmError::Divergence(format!(
            "loss {loss:.4e}, gradient norm {norm:.4e}, max |trainable param| {max_param:.4e}, learning rate {learning_rate:e}"
        )));
    }
    let scale = if opt.grad_clip > 0.0 && norm > opt.grad_clip { opt.grad_clip / norm } else { 1.0 };
    for (id, g) in grads.by_param {
        debug_assert_eq!(model.params().param(id).role, Role::Trainable);
        let v = opt.velocity.entry(id).or_insert_with(|| Array2::zeros(g.raw_dim()));
        *v *= opt.momentum;
        v.scaled_add(scale, &g);
        let step = v.clone();
        model.params_mut().get_mut(id).scaled_add(-learning_rate, &step);
    }
    Ok(loss)
}
