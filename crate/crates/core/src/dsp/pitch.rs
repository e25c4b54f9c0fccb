//! YIN-style F0 tracking.
//!
//! Each frame computes the squared difference function over lags up to
//! `sample_rate / f_min`, normalizes it by its cumulative mean, takes the
//! first dip under the voicing threshold (walked down to its local
//! minimum) and refines the lag with parabolic interpolation. A frame is
//! voiced when the normalized difference at the chosen lag is below the
//! threshold.

use super::{AudioBuffer, Contour, DspError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Params {
    pub f_min: f64,
    pub f_max: f64,
    pub hop: usize,
    /// Analysis frame length in samples; grown to `2 * sample_rate / f_min` when shorter.
    pub frame_len: usize,
    /// Maximum cumulative-mean-normalized difference for a voiced frame.
    pub voicing_threshold: f64,
    /// Mean-square level under which a frame is treated as silence.
    pub silence_floor: f64,
}

impl Default for F0Params {
    fn default() -> Self {
        Self {
            f_min: 40.0,
            f_max: 1600.0,
            hop: 160,
            frame_len: 1024,
            voicing_threshold: 0.3,
            silence_floor: 1e-10,
        }
    }
}

pub fn estimate_f0(audio: &AudioBuffer, f_min: f64, f_max: f64, hop: usize) -> Result<Contour> {
    estimate_f0_with(audio, &F0Params { f_min, f_max, hop, ..F0Params::default() })
}

pub fn estimate_f0_with(audio: &AudioBuffer, params: &F0Params) -> Result<Contour> {
    let sr = audio.sample_rate() as f64;
    if !(params.f_min > 0.0 && params.f_min < params.f_max && params.f_max < sr / 2.0) {
        return Err(DspError::Parameter(format!(
            "need 0 < f_min < f_max < sample_rate/2, got f_min {}, f_max {}",
            params.f_min, params.f_max
        )));
    }
    if params.hop == 0 {
        return Err(DspError::Parameter("hop must be positive".into()));
    }
    if audio.is_empty() {
        return Err(DspError::EmptyInput);
    }

    let tau_max = (sr / params.f_min).ceil() as usize;
    let tau_min = ((sr / params.f_max).floor() as usize).max(2);
    let frame_len = params.frame_len.max(2 * tau_max + 2);
    let window = frame_len - tau_max;

    let samples = audio.samples();
    let n_frames = samples.len().div_ceil(params.hop).max(1);
    let mut frame = vec![0.0f64; frame_len];
    let mut diff = vec![0.0f64; tau_max + 1];
    let mut values = Vec::with_capacity(n_frames);
    let mut voiced = Vec::with_capacity(n_frames);

    for l in 0..n_frames {
        // Windows are clamped inside the signal so edge frames never see padding.
        let center = l * params.hop;
        let start = center.saturating_sub(frame_len / 2).min(samples.len().saturating_sub(frame_len));
        for (j, slot) in frame.iter_mut().enumerate() {
            *slot = samples.get(start + j).copied().unwrap_or(0.0) as f64;
        }
        match yin_frame(&frame, window, tau_min, tau_max, params, &mut diff) {
            Some(lag) => {
                let f0 = sr / lag;
                if (params.f_min..=params.f_max).contains(&f0) {
                    values.push(f0 as f32);
                    voiced.push(true);
                    continue;
                }
                values.push(0.0);
                voiced.push(false);
            }
            None => {
                values.push(0.0);
                voiced.push(false);
            }
        }
    }
    Contour::new(values, voiced, sr / params.hop as f64)
}

/// Returns the refined lag in samples for a voiced frame.
fn yin_frame(
    frame: &[f64],
    window: usize,
    tau_min: usize,
    tau_max: usize,
    params: &F0Params,
    diff: &mut [f64],
) -> Option<f64> {
    let power = frame[..window].iter().map(|x| x * x).sum::<f64>() / window as f64;
    if power < params.silence_floor {
        return None;
    }
    diff[0] = 1.0;
    let mut running = 0.0;
    for tau in 1..=tau_max {
        let d: f64 = frame[..window]
            .iter()
            .zip(&frame[tau..tau + window])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        running += d;
        diff[tau] = if running > 0.0 { d * tau as f64 / running } else { 1.0 };
    }

    let mut tau = (tau_min..=tau_max).find(|&t| diff[t] < params.voicing_threshold)?;
    while tau < tau_max && diff[tau + 1] < diff[tau] {
        tau += 1;
    }
    let shift = if tau > 1 && tau < tau_max {
        let (a, b, c) = (diff[tau - 1], diff[tau], diff[tau + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    Some(tau as f64 + shift)
}
