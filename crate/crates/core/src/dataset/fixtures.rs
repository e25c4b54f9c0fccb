//! A small synthetic corpus with strong labels, captions, system outputs
//! and a fast toy-model configuration, generated deterministically from a
//! seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::{DatasetError, Result};
use crate::dsp::{wav::write_wav, AudioBuffer};
use crate::events::{format_event_table, ClipEvents, Event, EventList};
use crate::ldm::{ModelConfig, ProbeConfig, ToyConfig, TrainConfig};
use crate::rng::substream;

pub const FIXTURE_CLASSES: [&str; 3] = ["bell", "dog", "speech"];

const SAMPLE_RATE: u32 = 16_000;
const CLIP_SECONDS: f64 = 10.0;
const N_CLIPS: usize = 12;
/// Labeled but without a caption.
const NO_CAPTION: &str = "fx10";
/// Labeled and captioned but without audio.
const NO_AUDIO: &str = "fx11";

/// Paths of a generated fixture corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureCorpus {
    pub root: PathBuf,
    /// `<id>.wav` reference clips.
    pub audio_dir: PathBuf,
    /// `<id>.wav` clips standing in for generated audio, one per buildable clip.
    pub generated_dir: PathBuf,
    /// Strong labels with a header and one malformed row.
    pub labels: PathBuf,
    pub captions: PathBuf,
    /// Detected events for the generated clips.
    pub pred_events: PathBuf,
    pub toy_config: PathBuf,
}

/// Model and probe sizes small enough for a full guidance/step sweep in seconds.
pub fn fixture_toy_config() -> ToyConfig {
    ToyConfig {
        model: ModelConfig {
            latent_t: 16,
            latent_f: 8,
            mel_bins: 16,
            hidden: 16,
            ffn_hidden: 32,
            text_dim: 16,
            max_text_tokens: 8,
            n_layers: 2,
            strides: vec![2, 4],
            cond_len: 16,
            n_bins: 32,
            label_dim: 16,
            ..ModelConfig::default()
        },
        train: TrainConfig { steps: 40, batch_size: 8, log_every: 10, ..TrainConfig::default() },
        probe: ProbeConfig { train_pool: 32, eval_samples: 4, ..ProbeConfig::default() },
    }
}

fn random_events(rng: &mut impl Rng) -> EventList {
    let n = rng.random_range(1..=3);
    let mut events: EventList = (0..n)
        .map(|_| {
            let class = FIXTURE_CLASSES[rng.random_range(0..FIXTURE_CLASSES.len())];
            let onset = (rng.random_range(0.0..7.5f64) * 100.0).round() / 100.0;
            let dur = (rng.random_range(0.6..2.4f64) * 100.0).round() / 100.0;
            Event::new(class, onset, onset + dur)
        })
        .collect();
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    events
}

fn caption(events: &EventList) -> String {
    let phrase = |c: &str| match c {
        "bell" => "a bell rings",
        "dog" => "a dog barks",
        _ => "a man speaks",
    };
    let mut parts: Vec<&str> = events.iter().map(|e| phrase(&e.class)).collect();
    parts.dedup();
    parts.join(" and then ")
}

/// Mixes tonal sketches of each event over faint noise. `pitch_scale`
/// shifts voiced events and `gain` scales every event.
fn render(events: &EventList, pitch_scale: f64, gain: f64, rng: &mut impl Rng) -> Result<AudioBuffer> {
    let sr = SAMPLE_RATE as f64;
    let n = (CLIP_SECONDS * sr) as usize;
    let mut x: Vec<f64> = (0..n).map(|_| 0.003 * rng.random_range(-1.0..1.0f64)).collect();
    use std::f64::consts::TAU;
    for e in events {
        let (a, b) = ((e.onset * sr) as usize, ((e.offset * sr) as usize).min(n));
        let len = (b - a) as f64 / sr;
        let mut phase = 0.0;
        for (k, slot) in x[a..b].iter_mut().enumerate() {
            let t = k as f64 / sr;
            let fade = (t / 0.02).min((len - t) / 0.02).clamp(0.0, 1.0);
            let v = match e.class.as_str() {
                "speech" => {
                    let f0 = pitch_scale * (140.0 + 80.0 * t / len);
                    phase += TAU * f0 / sr;
                    (1..=4).map(|h| (h as f64 * phase).sin() / h as f64).sum::<f64>() * 0.12
                }
                "bell" => {
                    let env = (-t / 0.6).exp();
                    0.3 * env * ((TAU * 880.0 * pitch_scale * t).sin() + 0.4 * (TAU * 2112.0 * pitch_scale * t).sin())
                }
                _ => {
                    let on = (t % 0.4) < 0.15;
                    if on {
                        0.3 * (TAU * 500.0 * pitch_scale * t).sin().signum() * (TAU * 7.0 * t).sin().abs()
                    } else {
                        0.0
                    }
                }
            };
            *slot += gain * fade * v;
        }
    }
    let samples = x.into_iter().map(|v| v.clamp(-0.99, 0.99) as f32).collect();
    Ok(AudioBuffer::new(samples, SAMPLE_RATE)?)
}

/// Events a detector might report for the generated version of a clip.
fn detected(events: &EventList, rng: &mut impl Rng) -> EventList {
    let mut out = EventList::new();
    for (i, e) in events.iter().enumerate() {
        if i > 0 && !rng.random_bool(0.7) {
            continue;
        }
        let shift = (rng.random_range(-0.3..0.3f64) * 100.0).round() / 100.0;
        let onset = (e.onset + shift).max(0.0);
        out.push(Event::new(e.class.clone(), onset, (e.offset + shift).min(CLIP_SECONDS).max(onset + 0.1)));
    }
    out.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    out
}

/// Writes the corpus under `dir`, replacing earlier fixture files.
pub fn write_fixture_corpus(dir: impl AsRef<Path>, seed: u64) -> Result<FixtureCorpus> {
    let root = dir.as_ref().to_path_buf();
    let corpus = FixtureCorpus {
        audio_dir: root.join("audio"),
        generated_dir: root.join("generated"),
        labels: root.join("labels.tsv"),
        captions: root.join("captions.json"),
        pred_events: root.join("pred_events.tsv"),
        toy_config: root.join("toy.toml"),
        root,
    };
    std::fs::create_dir_all(&corpus.audio_dir)?;
    std::fs::create_dir_all(&corpus.generated_dir)?;

    let mut rng = substream(seed, "fixture-events");
    let mut labels = ClipEvents::new();
    let mut preds = ClipEvents::new();
    let mut captions = BTreeMap::new();
    for i in 0..N_CLIPS {
        let id = format!("fx{i:02}");
        let events = random_events(&mut rng);
        preds.insert(id.clone(), detected(&events, &mut rng));
        if id != NO_CAPTION {
            captions.insert(id.clone(), caption(&events));
        }
        if id != NO_AUDIO {
            let reference = render(&events, 1.0, 1.0, &mut substream(seed, &format!("fixture-audio-{id}")))?;
            write_wav(corpus.audio_dir.join(format!("{id}.wav")), &reference)?;
        }
        if id != NO_AUDIO && id != NO_CAPTION {
            let generated = render(&preds[&id], 1.06, 0.8, &mut substream(seed, &format!("fixture-gen-{id}")))?;
            write_wav(corpus.generated_dir.join(format!("{id}.wav")), &generated)?;
        }
        labels.insert(id, events);
    }

    let mut label_text = String::from("segment_id\tstart_time_seconds\tend_time_seconds\tlabel\n");
    label_text.push_str(&format_event_table(&labels));
    label_text.push_str("fx03\t6.50\t5.00\tdog\n");
    std::fs::write(&corpus.labels, label_text)?;
    std::fs::write(&corpus.pred_events, format_event_table(&preds))?;
    let mut caption_json = serde_json::to_string_pretty(&captions)?;
    caption_json.push('\n');
    std::fs::write(&corpus.captions, caption_json)?;
    let toy = fixture_toy_config();
    toy.validate().map_err(|e| DatasetError::Config(e.to_string()))?;
    std::fs::write(&corpus.toy_config, toy.to_toml())?;
    Ok(corpus)
}
