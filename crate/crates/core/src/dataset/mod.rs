//! Dataset construction: strong-label ingestion, per-clip condition
//! extraction, manifests with deterministic splits, and the `ACND` binary
//! format for contours, grids and class objects.

mod acnd;
mod fixtures;
mod manifest;

pub use acnd::{
    decode_acnd, encode_acnd, read_acnd, read_contour, write_acnd, write_contour, AcndArray, AcndKind, ACND_VERSION,
};
pub use fixtures::{fixture_toy_config, write_fixture_corpus, FixtureCorpus, FIXTURE_CLASSES};
pub use manifest::{
    build_manifest, load_captions, parse_strong_labels, split_manifest, BuildReport, ClipRecord, Exclusion, Manifest,
    ManifestHeader, Split, SplitCounts, StrongLabels,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{
    cwt_decompose, estimate_f0_with, frame_energy, log_quantize, stft, wav, AudioBuffer, Contour, DspError, F0Params,
    QuantizedContour,
};

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported ACND version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("clip {id}: {kind} contour has {got} frames, expected {expected}")]
    Length { id: String, kind: &'static str, expected: usize, got: usize },
    #[error("split counts {requested} exceed the {available} eligible records")]
    Counts { requested: String, available: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Frame geometry and analysis settings shared by extraction and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    /// Clips are center-cropped or zero-padded to this length.
    pub clip_seconds: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub voicing_threshold: f64,
    pub n_bins: usize,
    pub cwt_scales: usize,
    /// Lower end of the energy quantization range.
    pub energy_min: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window: 1024,
            hop: 160,
            clip_seconds: 10.0,
            f_min: 40.0,
            f_max: 1600.0,
            voicing_threshold: 0.3,
            n_bins: 256,
            cwt_scales: 10,
            energy_min: 1e-4,
        }
    }
}

/// Pitch (Hz, zero when unvoiced) and frame energy of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub pitch: Contour,
    pub energy: Contour,
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatasetError::Config(m));
        if self.hop == 0 || self.window < self.hop {
            return bad(format!("need window >= hop > 0, got {} / {}", self.window, self.hop));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return bad(format!("clip_seconds must be positive, got {}", self.clip_seconds));
        }
        if !(self.f_min > 0.0 && self.f_min < self.f_max && self.f_max < self.sample_rate as f64 / 2.0) {
            return bad(format!("need 0 < f_min < f_max < sample_rate / 2, got {} / {}", self.f_min, self.f_max));
        }
        if self.n_bins < 2 || self.cwt_scales == 0 || !self.energy_min.is_finite() || self.energy_min <= 0.0 {
            return bad("n_bins >= 2, cwt_scales >= 1 and energy_min > 0 are required".into());
        }
        Ok(())
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Frames per clip, `L`.
    pub fn n_frames(&self) -> usize {
        ((self.clip_seconds * self.sample_rate as f64).round() as usize).div_ceil(self.hop).max(1)
    }

    fn f0_params(&self) -> F0Params {
        F0Params {
            f_min: self.f_min,
            f_max: self.f_max,
            hop: self.hop,
            voicing_threshold: self.voicing_threshold,
            ..F0Params::default()
        }
    }

    /// Extracts pitch and energy after fitting the clip to `clip_seconds`.
    pub fn extract(&self, audio: &AudioBuffer) -> Result<Extracted> {
        let audio = audio.resample(self.sample_rate)?.fit_duration(self.clip_seconds);
        let energy = frame_energy(&stft(&audio, self.window, self.hop)?);
        let pitch = estimate_f0_with(&audio, &self.f0_params())?;
        Ok(Extracted { pitch, energy })
    }

    /// Reads a WAV file (resampling when needed) and extracts it.
    pub fn extract_file(&self, path: impl AsRef<Path>) -> Result<Extracted> {
        self.extract(&wav::read_wav_at(path, self.sample_rate)?)
    }

    /// Pitch condition: the contour is rebuilt from its wavelet
    /// decomposition, floored at `f_min` on voiced frames and quantized on
    /// `[f_min, f_max]`. Contours with fewer than two voiced frames are
    /// quantized directly.
    pub fn pitch_condition(&self, pitch: &Contour) -> Result<QuantizedContour> {
        let smooth = if pitch.voiced_count() >= 2 {
            let rebuilt = cwt_decompose(pitch, self.cwt_scales)?.reconstruct_denormalized()?;
            let floor = self.f_min as f32;
            Contour::new(rebuilt.values.iter().map(|v| v.max(floor)).collect(), rebuilt.voiced, rebuilt.frame_rate)?
        } else {
            pitch.clone()
        };
        Ok(log_quantize(&smooth, self.n_bins, self.f_min, self.f_max)?)
    }

    /// Energy condition quantized on `[energy_min, energy_max]`.
    pub fn energy_condition(&self, energy: &Contour, energy_max: f64) -> Result<QuantizedContour> {
        Ok(log_quantize(energy, self.n_bins, self.energy_min, energy_max)?)
    }
}
