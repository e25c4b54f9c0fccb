//! RIFF/WAVE input and output.

use std::path::Path;

use super::{AudioBuffer, DspError, Result};

/// Reads a PCM integer or 32-bit float WAV file, averaging channels to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(DspError::InvalidAudio("zero channels".into()));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(DspError::InvalidAudio(format!("{}-bit float is not supported", spec.bits_per_sample)));
            }
            reader.samples::<f32>().collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Int => {
            let scale = 2f32.powi(spec.bits_per_sample as i32 - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| (frame.iter().sum::<f32>() / channels as f32).clamp(-1.0, 1.0))
        .collect();
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Reads a WAV file and resamples it to `sample_rate` when it differs.
pub fn read_wav_at(path: impl AsRef<Path>, sample_rate: u32) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let audio = read_wav(path)?;
    if audio.sample_rate() != sample_rate {
        log::warn!(
            "{}: resampling {} Hz -> {} Hz (linear interpolation)",
            path.display(),
            audio.sample_rate(),
            sample_rate
        );
        return audio.resample(sample_rate);
    }
    Ok(audio)
}

/// Writes 16-bit mono PCM.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in audio.samples() {
        writer.write_sample((s * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}
