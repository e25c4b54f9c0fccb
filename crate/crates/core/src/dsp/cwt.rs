//! Mexican-hat continuous wavelet transform over frame-level contours.
//!
//! Kernels are `s^{-1/2} psi(n / s)` with `psi(t) = (1 - t^2) exp(-t^2 / 2)`,
//! truncated at five scale widths and re-centered so each sums to zero.
//! Reconstruction is the single-integral weighted sum over scales; for
//! dyadic spacing the weight is `ln 2 / sqrt(2 pi)` per `W(s, t) / sqrt(s)`.

use ndarray::Array2;

use super::{Contour, DspError, Result};

const SUPPORT: f64 = 5.0;

/// Wavelet coefficients (`frames x scales`) of a normalized contour.
#[derive(Debug, Clone, PartialEq)]
pub struct CwtMatrix {
    pub coeffs: Array2<f64>,
    pub scales: Vec<f64>,
    /// Voiced-frame statistics used for normalization.
    pub mean: f64,
    pub std: f64,
    pub voiced: Vec<bool>,
    pub frame_rate: f64,
}

impl CwtMatrix {
    /// Reconstructs, undoes the normalization and re-applies the voicing mask.
    pub fn reconstruct_denormalized(&self) -> Result<Contour> {
        let rec = cwt_reconstruct_with(&self.coeffs, &self.scales)?;
        let values = rec.iter().map(|&v| (self.mean + self.std * v) as f32).collect();
        Contour::new(values, self.voiced.clone(), self.frame_rate)
    }
}

/// `n` dyadic scales starting at one frame.
pub fn dyadic_scales(n: usize) -> Vec<f64> {
    (0..n).map(|j| 2f64.powi(j as i32)).collect()
}

fn mexican_hat(t: f64) -> f64 {
    (1.0 - t * t) * (-0.5 * t * t).exp()
}

fn kernel(scale: f64) -> Vec<f64> {
    let half = (SUPPORT * scale).ceil() as isize;
    let norm = scale.sqrt();
    let mut k: Vec<f64> = (-half..=half).map(|n| mexican_hat(n as f64 / scale) / norm).collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    k
}

fn reflect(signal: &[f64], i: isize) -> f64 {
    let n = signal.len() as isize;
    if n == 1 {
        return signal[0];
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    signal[m as usize]
}

/// Raw transform of a signal with reflective boundaries.
pub fn cwt_transform(signal: &[f64], scales: &[f64]) -> Result<Array2<f64>> {
    if signal.is_empty() {
        return Err(DspError::EmptyInput);
    }
    if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(DspError::Parameter("scales must be positive".into()));
    }
    let n = signal.len();
    let mut out = Array2::zeros((n, scales.len()));
    for (j, &s) in scales.iter().enumerate() {
        let k = kernel(s);
        let half = (k.len() / 2) as isize;
        for t in 0..n {
            let acc: f64 = k
                .iter()
                .enumerate()
                .map(|(m, &w)| w * reflect(signal, t as isize + half - m as isize))
                .sum();
            out[[t, j]] = acc;
        }
    }
    Ok(out)
}

/// Linear gap filling across unvoiced frames; edges hold the nearest voiced value.
fn fill_gaps(contour: &Contour) -> Vec<f64> {
    let voiced_idx: Vec<usize> = (0..contour.len()).filter(|&i| contour.voiced[i]).collect();
    let v = |i: usize| contour.values[i] as f64;
    let mut out = vec![0.0; contour.len()];
    let (first, last) = (voiced_idx[0], *voiced_idx.last().unwrap());
    out[..=first].iter_mut().for_each(|x| *x = v(first));
    out[last..].iter_mut().for_each(|x| *x = v(last));
    for pair in voiced_idx.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for (i, slot) in out.iter_mut().enumerate().take(b + 1).skip(a) {
            let frac = (i - a) as f64 / (b - a) as f64;
            *slot = v(a) * (1.0 - frac) + v(b) * frac;
        }
    }
    out
}

/// Gap-fills, z-normalizes over voiced frames and transforms at `n_scales` dyadic scales.
pub fn cwt_decompose(contour: &Contour, n_scales: usize) -> Result<CwtMatrix> {
    let voiced = contour.voiced_count();
    if voiced < 2 {
        return Err(DspError::ContourTooSparse { voiced });
    }
    if n_scales == 0 {
        return Err(DspError::Parameter("need at least one scale".into()));
    }
    let filled = fill_gaps(contour);
    let n = voiced as f64;
    let mean = contour.voiced_values().map(|x| x as f64).sum::<f64>() / n;
    let var = contour.voiced_values().map(|x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    let normalized: Vec<f64> = filled.iter().map(|x| (x - mean) / std).collect();
    let scales = dyadic_scales(n_scales);
    Ok(CwtMatrix {
        coeffs: cwt_transform(&normalized, &scales)?,
        scales,
        mean,
        std,
        voiced: contour.voiced.clone(),
        frame_rate: contour.frame_rate,
    })
}

/// Reconstructs the normalized (gap-filled) contour.
pub fn cwt_reconstruct(matrix: &CwtMatrix) -> Result<Contour> {
    let rec = cwt_reconstruct_with(&matrix.coeffs, &matrix.scales)?;
    Contour::dense(rec.into_iter().map(|v| v as f32).collect(), matrix.frame_rate)
}

pub fn cwt_reconstruct_with(coeffs: &Array2<f64>, scales: &[f64]) -> Result<Vec<f64>> {
    if coeffs.ncols() != scales.len() {
        return Err(DspError::ScaleMismatch { matrix: coeffs.ncols(), scales: scales.len() });
    }
    let step = if scales.len() > 1 { (scales[1] / scales[0]).ln() } else { std::f64::consts::LN_2 };
    let weight = step / (2.0 * std::f64::consts::PI).sqrt();
    Ok(coeffs
        .rows()
        .into_iter()
        .map(|row| weight * row.iter().zip(scales).map(|(w, s)| w / s.sqrt()).sum::<f64>())
        .collect())
}
