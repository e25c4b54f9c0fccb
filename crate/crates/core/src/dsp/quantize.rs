use super::{Contour, DspError, Result};

/// Bin indices on a log scale. Bin 0 is reserved for unvoiced or silent
/// frames; voiced values occupy bins `1..n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedContour {
    pub indices: Vec<u16>,
    pub n_bins: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub frame_rate: f64,
}

impl QuantizedContour {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Width of one voiced bin in natural-log units.
    pub fn log_bin_width(&self) -> f64 {
        bin_width(self.n_bins, self.v_min, self.v_max)
    }

    /// Indices rescaled to `[0, 1]` as `bin / (n_bins - 1)`.
    pub fn normalized(&self) -> Vec<f64> {
        let top = (self.n_bins - 1) as f64;
        self.indices.iter().map(|&b| b as f64 / top).collect()
    }
}

fn bin_width(n_bins: usize, v_min: f64, v_max: f64) -> f64 {
    (v_max.ln() - v_min.ln()) / (n_bins.saturating_sub(2).max(1)) as f64
}

fn check(n_bins: usize, v_min: f64, v_max: f64) -> Result<()> {
    if n_bins < 2 || n_bins > u16::MAX as usize + 1 {
        return Err(DspError::Parameter(format!("n_bins must be in [2, 65536], got {n_bins}")));
    }
    if !(v_min > 0.0 && v_min < v_max && v_max.is_finite()) {
        return Err(DspError::Parameter(format!("need 0 < v_min < v_max, got [{v_min}, {v_max}]")));
    }
    Ok(())
}

/// Quantizes one value; `None` marks an unvoiced frame.
pub(crate) fn quantize_value(v: Option<f64>, n_bins: usize, v_min: f64, v_max: f64) -> u16 {
    match v {
        Some(v) if v > 0.0 => {
            let v = v.clamp(v_min, v_max);
            let pos = (n_bins - 2) as f64 * (v.ln() - v_min.ln()) / (v_max.ln() - v_min.ln());
            (1 + pos.floor() as usize).clamp(1, n_bins - 1) as u16
        }
        _ => 0,
    }
}

pub fn log_quantize(contour: &Contour, n_bins: usize, v_min: f64, v_max: f64) -> Result<QuantizedContour> {
    check(n_bins, v_min, v_max)?;
    let indices = contour
        .values
        .iter()
        .zip(&contour.voiced)
        .map(|(&v, &on)| quantize_value(on.then_some(v as f64), n_bins, v_min, v_max))
        .collect();
    Ok(QuantizedContour { indices, n_bins, v_min, v_max, frame_rate: contour.frame_rate })
}

/// Maps bins back to their geometric centers (bin 0 to 0).
pub fn log_dequantize(q: &QuantizedContour) -> Contour {
    let width = q.log_bin_width();
    let values: Vec<f32> = q
        .indices
        .iter()
        .map(|&b| match b {
            0 => 0.0,
            _ if q.n_bins == 2 => (q.v_min * q.v_max).sqrt() as f32,
            b => (q.v_min.ln() + (b as f64 - 0.5) * width).exp() as f32,
        })
        .collect();
    let voiced = q.indices.iter().map(|&b| b > 0).collect();
    Contour { values, voiced, frame_rate: q.frame_rate }
}
