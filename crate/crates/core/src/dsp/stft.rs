use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AudioBuffer, Contour, DspError, Result};

/// How frames are laid out over the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// Reflect-pad so frame `l` is centered on sample `l * hop`; yields
    /// `ceil(len / hop)` frames.
    #[default]
    Center,
    /// No padding; `1 + (len - window) / hop` frames, or a single
    /// zero-padded frame when the signal is shorter than the window.
    None,
}

/// One-sided complex spectrum per frame, stored row-major (`frames x n_bins`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    n_bins: usize,
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn from_frames(frames: Vec<Vec<Complex64>>, window_size: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        let n_bins = window_size / 2 + 1;
        if frames.iter().any(|f| f.len() != n_bins) {
            return Err(DspError::Parameter(format!("every frame must have {n_bins} bins")));
        }
        let n_frames = frames.len();
        Ok(Self {
            data: frames.into_iter().flatten().collect(),
            n_frames,
            n_bins,
            window_size,
            hop,
            sample_rate,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn frame(&self, l: usize) -> &[Complex64] {
        &self.data[l * self.n_bins..(l + 1) * self.n_bins]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks(self.n_bins)
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reads sample `i` of a signal extended by mirror reflection (no edge repeat).
pub(crate) fn reflect_sample(samples: &[f32], i: isize) -> f32 {
    let n = samples.len() as isize;
    if n == 1 {
        return if i == 0 { samples[0] } else { 0.0 };
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    samples[m as usize]
}

pub(crate) fn frame_starts(len: usize, window: usize, hop: usize, padding: Padding) -> Vec<isize> {
    match padding {
        Padding::Center => {
            let n = len.div_ceil(hop).max(1);
            (0..n).map(|l| (l * hop) as isize - (window / 2) as isize).collect()
        }
        Padding::None => {
            if len < window {
                vec![0]
            } else {
                (0..=(len - window) / hop).map(|l| (l * hop) as isize).collect()
            }
        }
    }
}

/// Center-padded Hann STFT.
pub fn stft(audio: &AudioBuffer, window_size: usize, hop: usize) -> Result<ComplexSpectrogram> {
    stft_with(audio, window_size, hop, Padding::Center)
}

pub fn stft_with(audio: &AudioBuffer, window_size: usize, hop: usize, padding: Padding) -> Result<ComplexSpectrogram> {
    if audio.is_empty() {
        return Err(DspError::EmptyInput);
    }
    if hop == 0 || window_size < hop {
        return Err(DspError::Parameter(format!(
            "need window_size >= hop > 0, got window {window_size}, hop {hop}"
        )));
    }
    let samples = audio.samples();
    let window = hann_window(window_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_size);
    let n_bins = window_size / 2 + 1;
    let starts = frame_starts(samples.len(), window_size, hop, padding);

    let mut data = Vec::with_capacity(starts.len() * n_bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); window_size];
    for &start in &starts {
        for (j, slot) in buf.iter_mut().enumerate() {
            let idx = start + j as isize;
            let x = match padding {
                Padding::Center => reflect_sample(samples, idx),
                Padding::None => samples.get(idx as usize).copied().unwrap_or(0.0),
            };
            *slot = Complex64::new(x as f64 * window[j], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..n_bins]);
    }
    Ok(ComplexSpectrogram {
        data,
        n_frames: starts.len(),
        n_bins,
        window_size,
        hop,
        sample_rate: audio.sample_rate(),
    })
}

/// L2 norm of each frame's one-sided magnitude spectrum.
pub fn frame_energy(spec: &ComplexSpectrogram) -> Contour {
    let values = spec
        .frames()
        .map(|frame| frame.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt() as f32)
        .collect::<Vec<_>>();
    let voiced = vec![true; values.len()];
    Contour { values, voiced, frame_rate: spec.frame_rate() }
}
