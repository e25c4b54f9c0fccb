use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::dsp::Contour;

/// Population standard deviation, skewness and non-excess kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub sigma: f64,
    pub gamma: f64,
    pub kappa: f64,
}

/// Moments of a sample, computed in two passes around the mean.
pub fn moments(values: &[f64]) -> Result<Moments> {
    if values.len() < 2 {
        return Err(MetricsError::InsufficientVoiced { voiced: values.len() });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let sigma = m2.sqrt();
    if sigma <= 1e-12 * mean.abs().max(1.0) {
        return Err(MetricsError::ZeroVariance);
    }
    Ok(Moments { sigma, gamma: m3 / (sigma * m2), kappa: m4 / (m2 * m2) })
}

/// Moments over the voiced frames of a pitch contour.
pub fn pitch_moments(contour: &Contour) -> Result<Moments> {
    let voiced: Vec<f64> = contour.voiced_values().map(f64::from).collect();
    moments(&voiced)
}
