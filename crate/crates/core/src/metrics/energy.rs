use super::{MetricsError, Result};
use crate::dsp::QuantizedContour;

/// Mean absolute difference of two equal-length series.
pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty("mae over zero frames".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// MAE between quantized energy contours on the `bin / (n_bins - 1)` scale.
pub fn energy_mae(generated: &QuantizedContour, reference: &QuantizedContour) -> Result<f64> {
    if generated.n_bins != reference.n_bins {
        return Err(MetricsError::Parameter(format!(
            "bin counts differ: {} vs {}",
            generated.n_bins, reference.n_bins
        )));
    }
    mae(&generated.normalized(), &reference.normalized())
}
