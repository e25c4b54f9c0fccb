//! Synthetic controllability probe.
//!
//! Every probe example carries a caption, an event grid, a pitch contour and
//! an energy contour. Its clean latent `x0` writes a deterministic function
//! of each condition into its own latent feature column, so a model that
//! follows a condition produces samples whose column correlates with the
//! condition-derived target.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ModelConfig, ToyConfig};
use super::model::{ControlCond, ControlInput, ControlKind, LatentMel, TextCond, TextEmbedding, ToyModel};
use super::sample::sample;
use super::train::{guidance_dropout, ldm_loss, train_step, DropMode, Optimizer, TrainItem};
use super::Result;
use crate::conditions::{EmbeddingProvider, HashEmbeddings};
use crate::dsp::{log_dequantize, log_quantize, Contour};
use crate::rng::substream;

pub const PROBE_CLASSES: [&str; 8] = ["dog", "speech", "alarm", "engine", "music", "cat", "water", "bird"];
pub const PROBE_CAPTIONS: [&str; 4] =
    ["a dog barks in a park", "people talk in a quiet room", "an alarm rings loudly", "music plays outside"];

const PITCH_RANGE: (f64, f64) = (40.0, 1600.0);
const PITCH_CENTER: (f64, f64) = (200.0, 0.6);
const ENERGY_RANGE: (f64, f64) = (1e-3, 1.0);
const ENERGY_CENTER: (f64, f64) = (0.05, 1.5);

#[derive(Debug, Clone)]
pub struct ProbeSample {
    pub caption: usize,
    pub text: TextEmbedding,
    pub grid: Array2<f64>,
    pub class_vectors: Array2<f64>,
    pub pitch: Vec<u16>,
    pub energy: Vec<u16>,
    pub x0: LatentMel,
}

impl ProbeSample {
    pub fn control(&self, kind: ControlKind) -> ControlInput {
        match kind {
            ControlKind::Timestamp => {
                ControlInput::Timestamp { grid: self.grid.clone(), class_vectors: self.class_vectors.clone() }
            }
            ControlKind::Pitch => ControlInput::Pitch(self.pitch.clone()),
            ControlKind::Energy => ControlInput::Energy(self.energy.clone()),
        }
    }
}

/// Smooth curve in `[-1, 1]`: a normalized sum of three random low-frequency sinusoids.
fn smooth_curve(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.5..3.0), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.3..1.0)))
        .collect();
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 / n as f64;
            comps.iter().map(|(f, ph, a)| a * (std::f64::consts::TAU * f * x + ph).sin()).sum()
        })
        .collect();
    let peak = raw.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
    raw.into_iter().map(|v| v / peak).collect()
}

fn quantize(values: &[f64], n_bins: usize, range: (f64, f64)) -> Result<Vec<u16>> {
    let c = Contour::dense(values.iter().map(|&v| v as f32).collect(), 1.0)?;
    Ok(log_quantize(&c, n_bins, range.0, range.1)?.indices)
}

/// Condition-derived target, clamped to `[-1.5, 1.5]`, for a quantized contour.
fn contour_target(bins: &[u16], n_bins: usize, range: (f64, f64), center: (f64, f64)) -> Vec<f64> {
    let q = crate::dsp::QuantizedContour {
        indices: bins.to_vec(),
        n_bins,
        v_min: range.0,
        v_max: range.1,
        frame_rate: 1.0,
    };
    let deq = log_dequantize(&q);
    deq.values
        .iter()
        .zip(&deq.voiced)
        .map(|(&v, &on)| if on { ((v as f64).ln() - center.0.ln()) / center.1 } else { 0.0 }.clamp(-1.5, 1.5))
        .collect()
}

fn frame_of(tau: usize, latent_t: usize, cond_len: usize) -> usize {
    (tau * cond_len / latent_t).min(cond_len - 1)
}

/// Column slots: one per class, then pitch, energy and caption. Each slot is
/// repeated across the latent features as often as it fits.
fn slot_columns(slot: usize, n_classes: usize, latent_f: usize) -> Vec<usize> {
    let slots = n_classes + 3;
    (0..(latent_f / slots).max(1)).map(|r| r * slots + slot).filter(|&c| c < latent_f).collect()
}

fn caption_value(caption: usize) -> f64 {
    -1.0 + 2.0 * caption as f64 / (PROBE_CAPTIONS.len() - 1) as f64
}

/// Per-column targets over latent time for the condition `kind` of `s`.
pub fn probe_targets(s: &ProbeSample, kind: ControlKind, cfg: &ModelConfig) -> Vec<(usize, Vec<f64>)> {
    let d = s.grid.nrows();
    let frames: Vec<usize> = (0..cfg.latent_t).map(|tau| frame_of(tau, cfg.latent_t, cfg.cond_len)).collect();
    let spread = |slot: usize, series: Vec<f64>| {
        slot_columns(slot, d, cfg.latent_f).into_iter().map(|c| (c, series.clone())).collect::<Vec<_>>()
    };
    match kind {
        ControlKind::Timestamp => (0..d)
            .flat_map(|c| spread(c, frames.iter().map(|&l| if s.grid[[c, l]] > 0.5 { 1.0 } else { -1.0 }).collect()))
            .collect(),
        ControlKind::Pitch => {
            let t = contour_target(&s.pitch, cfg.n_bins, PITCH_RANGE, PITCH_CENTER);
            spread(d, frames.iter().map(|&l| t[l]).collect())
        }
        ControlKind::Energy => {
            let t = contour_target(&s.energy, cfg.n_bins, ENERGY_RANGE, ENERGY_CENTER);
            spread(d + 1, frames.iter().map(|&l| t[l]).collect())
        }
    }
}

/// Generates `n` probe examples from `rng`.
pub fn probe_dataset(model: &ToyModel, n_classes: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<ProbeSample>> {
    let cfg = model.config();
    let l = cfg.cond_len;
    let labels = HashEmbeddings::new(cfg.label_dim, cfg.seed);
    let mut class_vectors = Array2::zeros((n_classes, cfg.label_dim));
    for c in 0..n_classes {
        let v = labels.embed(PROBE_CLASSES[c % PROBE_CLASSES.len()]).expect("hash embeddings are total");
        class_vectors.row_mut(c).assign(&ndarray::ArrayView1::from(&v));
    }
    let texts: Vec<TextEmbedding> = PROBE_CAPTIONS.iter().map(|c| model.embed_caption(c)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let caption = rng.random_range(0..PROBE_CAPTIONS.len());
        let mut grid = Array2::zeros((n_classes, l));
        for c in 0..n_classes {
            for _ in 0..rng.random_range(1..=2) {
                let len = rng.random_range((l / 10).max(1)..=(l / 2).max(1));
                let start = rng.random_range(0..=(l - len));
                for f in start..start + len {
                    grid[[c, f]] = 1.0;
                }
            }
        }
        let p: Vec<f64> = smooth_curve(rng, l).iter().map(|s| PITCH_CENTER.0 * (PITCH_CENTER.1 * s).exp()).collect();
        let e: Vec<f64> = smooth_curve(rng, l).iter().map(|s| ENERGY_CENTER.0 * (ENERGY_CENTER.1 * s).exp()).collect();
        let mut s = ProbeSample {
            caption,
            text: texts[caption].clone(),
            grid,
            class_vectors: class_vectors.clone(),
            pitch: quantize(&p, cfg.n_bins, PITCH_RANGE)?,
            energy: quantize(&e, cfg.n_bins, ENERGY_RANGE)?,
            x0: Array2::zeros((cfg.latent_t, cfg.latent_f)),
        };
        let mut x0 = Array2::zeros((cfg.latent_t, cfg.latent_f));
        for kind in ControlKind::ALL {
            for (col, series) in probe_targets(&s, kind, cfg) {
                for (tau, v) in series.into_iter().enumerate() {
                    x0[[tau, col]] = v;
                }
            }
        }
        for col in slot_columns(n_classes + 2, n_classes, cfg.latent_f) {
            x0.column_mut(col).fill(caption_value(caption));
        }
        s.x0 = x0;
        out.push(s);
    }
    Ok(out)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 1e-12 && sbb > 1e-12).then(|| sab / (saa * sbb).sqrt())
}

/// Mean Pearson correlation between generated columns and the targets of `kind`.
/// Columns with a constant target or output count as 0.
pub fn probe_score(generated: &LatentMel, target: &ProbeSample, kind: ControlKind, cfg: &ModelConfig) -> f64 {
    let targets = probe_targets(target, kind, cfg);
    let total: f64 = targets
        .iter()
        .map(|(col, t)| pearson(&generated.column(*col).to_vec(), t).unwrap_or(0.0))
        .sum();
    total / targets.len() as f64
}

fn draw_batch(
    pool: &[ProbeSample],
    model: &ToyModel,
    size: usize,
    rng: &mut impl Rng,
) -> Vec<TrainItem> {
    let cfg = model.config();
    (0..size)
        .map(|_| {
            let s = &pool[rng.random_range(0..pool.len())];
            let kind = ControlKind::ALL[rng.random_range(0..3)];
            let t = rng.random_range(1..=cfg.diffusion_steps);
            let noise = Array2::from_shape_fn((cfg.latent_t, cfg.latent_f), |_| StandardNormal.sample(rng));
            TrainItem { x0: s.x0.clone(), t, noise, text: Some(s.text.clone()), control: Some(s.control(kind)) }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    /// Pre-update batch loss of every step.
    pub losses: Vec<f64>,
    /// Mean loss on a fixed held-out batch before training.
    pub initial_eval_loss: f64,
    /// Mean loss on the same batch after training.
    pub final_eval_loss: f64,
}

/// Loss of every held-out item, averaged.
pub fn eval_loss(model: &ToyModel, batch: &[TrainItem]) -> Result<f64> {
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|it| ldm_loss(model, &it.x0, it.t, &it.noise, it.text.as_ref(), it.control.as_ref()))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains the control path on the probe task; `on_step(step, loss)` is called after each step.
pub fn train_probe(model: &mut ToyModel, cfg: &ToyConfig, mut on_step: impl FnMut(usize, f64)) -> Result<TrainReport> {
    let seed = cfg.model.seed;
    let pool = probe_dataset(model, cfg.probe.n_classes, cfg.probe.train_pool, &mut substream(seed, "probe/pool"))?;
    let held = probe_dataset(model, cfg.probe.n_classes, 16, &mut substream(seed, "probe/held"))?;
    let eval_batch = draw_batch(&held, model, 64, &mut substream(seed, "probe/held-batch"));
    let initial_eval_loss = eval_loss(model, &eval_batch)?;

    let mode = if cfg.model.drop_both { DropMode::Both } else { DropMode::ControlOnly };
    let mut opt = Optimizer::new(cfg.train.momentum, cfg.train.grad_clip);
    let mut rng = substream(seed, "probe/train");
    let mut losses = Vec::with_capacity(cfg.train.steps);
    for step in 0..cfg.train.steps {
        let batch = draw_batch(&pool, model, cfg.train.batch_size, &mut rng);
        let batch = guidance_dropout(batch, cfg.train.guidance_dropout, mode, &mut rng)?;
        let loss = train_step(model, &mut opt, &batch, cfg.train.learning_rate)?;
        losses.push(loss);
        on_step(step, loss);
    }
    let final_eval_loss = eval_loss(model, &eval_batch)?;
    Ok(TrainReport { losses, initial_eval_loss, final_eval_loss })
}

/// Held-out probe examples used for controllability scoring.
pub fn probe_eval_set(model: &ToyModel, cfg: &ToyConfig) -> Result<Vec<ProbeSample>> {
    probe_dataset(model, cfg.probe.n_classes, cfg.probe.eval_samples, &mut substream(cfg.model.seed, "probe/eval"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeResult {
    pub matching: f64,
    pub shuffled: f64,
}

impl ProbeResult {
    pub fn gap(&self) -> f64 {
        self.matching - self.shuffled
    }
}

/// Scores samples against their own conditions and against those of the next example.
///
/// Both arms share the caption, the noise seed and the scoring target; only the
/// control condition differs.
pub fn evaluate_probe(
    model: &ToyModel,
    set: &[ProbeSample],
    steps: usize,
    omega: f64,
    seed: u64,
) -> Result<ProbeResult> {
    let n = set.len();
    let jobs: Vec<(usize, ControlKind, bool)> = (0..n)
        .flat_map(|i| ControlKind::ALL.into_iter().flat_map(move |k| [(i, k, false), (i, k, true)]))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, kind, shuffled)| {
            let source = if shuffled { &set[(i + 1) % n] } else { &set[i] };
            let emb = model.embed_control(&source.control(kind))?;
            let mut rng = substream(seed, &format!("probe/sample/{i}/{kind}"));
            let x = sample(model, TextCond::Caption(&set[i].text), ControlCond::Embedded(&emb), steps, omega, &mut rng)?;
            Ok(probe_score(&x, &set[i], kind, model.config()))
        })
        .collect::<Result<_>>()?;
    let mean = |flag: bool| {
        let v: Vec<f64> = jobs.iter().zip(&scores).filter(|(j, _)| j.2 == flag).map(|(_, s)| *s).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    Ok(ProbeResult { matching: mean(false), shuffled: mean(true) })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub omega: f64,
    pub steps: usize,
    pub matching: f64,
    pub shuffled: f64,
}

/// Probe scores over a guidance-scale by step-count grid.
pub fn sweep(
    model: &ToyModel,
    set: &[ProbeSample],
    omegas: &[f64],
    steps: &[usize],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &omega in omegas {
        for &s in steps {
            let r = evaluate_probe(model, set, s, omega, seed)?;
            rows.push(SweepRow { omega, steps: s, matching: r.matching, shuffled: r.shuffled });
        }
    }
    Ok(rows)
}

/// Plain-text table of a sweep.
pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("| Guidance | Step | Match ↑ | Shuffled | Gap ↑ |\n|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {:.3} | {:.3} | {:.3} |\n",
            r.omega,
            r.steps,
            r.matching,
            r.shuffled,
            r.matching - r.shuffled
        ));
    }
    out
}

