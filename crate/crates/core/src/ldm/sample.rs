//! Classifier-free guided DDIM sampling.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{ControlCond, LatentMel, TextCond, ToyModel};
use super::{LdmError, Result};

/// `omega * cond + (1 - omega) * uncond`.
pub fn cfg_combine(eps_cond: &LatentMel, eps_uncond: &LatentMel, omega: f64) -> Result<LatentMel> {
    if eps_cond.dim() != eps_uncond.dim() {
        return Err(LdmError::Shape(format!("{:?} vs {:?}", eps_cond.dim(), eps_uncond.dim())));
    }
    let mut out = eps_uncond * (1.0 - omega);
    out.scaled_add(omega, eps_cond);
    Ok(out)
}

/// Evenly spaced steps `round(k T / steps)` for `k = 1..=steps`, ascending.
pub fn ddim_timesteps(steps: usize, total: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(LdmError::Config(format!("sampling steps {steps} outside 1..={total}")));
    }
    Ok((1..=steps).map(|k| ((k * total) as f64 / steps as f64).round() as usize).collect())
}

/// Deterministic DDIM reverse trajectory from seeded Gaussian noise.
pub fn sample(
    model: &ToyModel,
    text: TextCond,
    control: ControlCond,
    steps: usize,
    omega: f64,
    rng: &mut impl Rng,
) -> Result<LatentMel> {
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(LdmError::Config(format!("guidance scale {omega} must be finite and >= 0")));
    }
    let cfg = model.config();
    let sched = model.schedule();
    let ts = ddim_timesteps(steps, sched.len())?;
    let uncond_text = if cfg.drop_both { TextCond::Null } else { text };
    let uncond_control = match control {
        ControlCond::Absent => ControlCond::Absent,
        _ => ControlCond::Null,
    };
    let cond_groups = model.control_group_values(control)?;
    let uncond_groups = model.control_group_values(uncond_control)?;

    let mut x: LatentMel = Array2::from_shape_fn((cfg.latent_t, cfg.latent_f), |_| StandardNormal.sample(rng));
    for k in (0..ts.len()).rev() {
        let t = ts[k];
        let t_prev = if k == 0 { 0 } else { ts[k - 1] };
        let eps_c = model.predict_with_groups(&x, t, text, cond_groups.as_deref())?;
        let eps = if omega == 1.0 {
            eps_c
        } else {
            let eps_u = model.predict_with_groups(&x, t, uncond_text, uncond_groups.as_deref())?;
            cfg_combine(&eps_c, &eps_u, omega)?
        };
        let ab = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t_prev);
        let x0_hat = (&x - &(&eps * (1.0 - ab).sqrt())) / ab.sqrt();
        x = &x0_hat * ab_prev.sqrt() + &eps * (1.0 - ab_prev).sqrt();
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(LdmError::SamplerDivergence { step: t, detail: format!("latent value {bad}") });
        }
    }
    Ok(x)
}
