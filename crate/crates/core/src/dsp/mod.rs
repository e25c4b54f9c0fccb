//! Signal-processing primitives used to derive control conditions from audio.
//!
//! Everything here is a pure function of its inputs: the short-time Fourier
//! transform and frame energy, YIN-style F0 tracking, a Mexican-hat
//! continuous wavelet transform over contours, and the logarithmic
//! quantizer that turns contours into bin indices.

mod cwt;
mod pitch;
mod quantize;
mod stft;
pub mod wav;

pub use cwt::{cwt_decompose, cwt_reconstruct, cwt_reconstruct_with, cwt_transform, dyadic_scales, CwtMatrix};
pub use pitch::{estimate_f0, estimate_f0_with, F0Params};
pub use quantize::{log_dequantize, log_quantize, QuantizedContour};
pub use stft::{frame_energy, hann_window, stft, stft_with, ComplexSpectrogram, Padding};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DspError>;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("contour too sparse: {voiced} voiced frames, need at least 2")]
    ContourTooSparse { voiced: usize },
    #[error("scale count mismatch: matrix has {matrix} columns, {scales} scales given")]
    ScaleMismatch { matrix: usize, scales: usize },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

/// Lowest accepted sample rate in Hz.
pub const MIN_SAMPLE_RATE: u32 = 8000;

/// Mono PCM audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(DspError::InvalidAudio(format!(
                "sample rate {sample_rate} Hz below {MIN_SAMPLE_RATE} Hz"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(DspError::InvalidAudio(format!(
                "sample {i} is {} (must be finite and within [-1, 1])",
                samples[i]
            )));
        }
        Ok(Self { samples, sample_rate })
    }

    /// `seconds` of digital silence.
    pub fn silence(seconds: f64, sample_rate: u32) -> Result<Self> {
        let n = (seconds * sample_rate as f64).round() as usize;
        Self::new(vec![0.0; n], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling.
    pub fn resample(&self, target_rate: u32) -> Result<Self> {
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        if target_rate < MIN_SAMPLE_RATE {
            return Err(DspError::Parameter(format!("target rate {target_rate} Hz too low")));
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let n_out = ((self.samples.len() as f64) / ratio).round() as usize;
        let last = self.samples.len().saturating_sub(1);
        let out = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let i0 = (pos.floor() as usize).min(last);
                let i1 = (i0 + 1).min(last);
                let frac = (pos - i0 as f64) as f32;
                self.samples[i0] * (1.0 - frac) + self.samples[i1] * frac
            })
            .collect();
        Self::new(out, target_rate)
    }

    /// Pads with trailing silence or center-crops so the buffer lasts exactly `seconds`.
    pub fn fit_duration(&self, seconds: f64) -> Self {
        let target = (seconds * self.sample_rate as f64).round() as usize;
        let samples = if self.samples.len() >= target {
            let start = (self.samples.len() - target) / 2;
            self.samples[start..start + target].to_vec()
        } else {
            let mut s = self.samples.clone();
            s.resize(target, 0.0);
            s
        };
        Self { samples, sample_rate: self.sample_rate }
    }
}

/// Per-frame scalar series: F0 in Hz (with voicing) or frame energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub values: Vec<f32>,
    pub voiced: Vec<bool>,
    pub frame_rate: f64,
}

impl Contour {
    /// Builds a contour and enforces that unvoiced frames carry 0.
    pub fn new(mut values: Vec<f32>, voiced: Vec<bool>, frame_rate: f64) -> Result<Self> {
        if values.len() != voiced.len() {
            return Err(DspError::Parameter(format!(
                "{} values but {} voicing flags",
                values.len(),
                voiced.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DspError::Parameter("contour values must be finite".into()));
        }
        for (v, &on) in values.iter_mut().zip(&voiced) {
            if !on {
                *v = 0.0;
            }
        }
        Ok(Self { values, voiced, frame_rate })
    }

    /// A contour with every frame voiced, as used for energy.
    pub fn dense(values: Vec<f32>, frame_rate: f64) -> Result<Self> {
        let voiced = vec![true; values.len()];
        Self::new(values, voiced, frame_rate)
    }

    /// Pitch-style contour where a value of 0 means unvoiced.
    pub fn from_hz(values: Vec<f32>, frame_rate: f64) -> Result<Self> {
        let voiced = values.iter().map(|&v| v > 0.0).collect();
        Self::new(values, voiced, frame_rate)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    pub fn voiced_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.values.iter().zip(&self.voiced).filter(|(_, &on)| on).map(|(&v, _)| v)
    }
}
