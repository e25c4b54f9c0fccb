//! Linear-beta diffusion schedule and the closed-form forward process.

use ndarray::Array2;

use super::{LdmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(LdmError::Config("diffusion_steps must be positive".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(LdmError::Config(format!("betas must satisfy 0 < {beta_start} <= {beta_end} < 1")));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            Err(LdmError::StepOutOfRange { t, max: self.len() })
        } else {
            Ok(())
        }
    }

    /// `alpha_bar_t` for `1 <= t <= T`, and 1 for `t = 0`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise`.
pub fn forward_diffuse(
    x0: &Array2<f64>,
    t: usize,
    noise: &Array2<f64>,
    sched: &DiffusionSchedule,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    if x0.dim() != noise.dim() {
        return Err(LdmError::Shape(format!("x0 {:?} vs noise {:?}", x0.dim(), noise.dim())));
    }
    let ab = sched.alpha_bar(t);
    Ok(x0 * ab.sqrt() + noise * (1.0 - ab).sqrt())
}
