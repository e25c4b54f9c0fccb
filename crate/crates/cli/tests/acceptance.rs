//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test -p condaudio-cli --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use condaudio::conditions::{class_embeddings, class_object, EventSet, HashEmbeddings, LabelEmbedding, TimestampGrid};
use condaudio::dsp::{
    cwt_decompose, cwt_reconstruct, estimate_f0, hann_window, log_dequantize, log_quantize, stft_with, AudioBuffer,
    Contour, Padding,
};
use condaudio::events::{Event, EventList};
use condaudio::ldm::probe::{evaluate_probe, probe_eval_set, train_probe};
use condaudio::ldm::{
    cfg_combine, loss_and_gradients, train_step, ControlCond, ControlInput, ModelConfig, Optimizer, Role, TextCond,
    TextEmbedding, ToyConfig, ToyModel, TrainItem,
};
use condaudio::metrics::{
    clip_macro_f1, dtw, energy_mae, event_based_scores, moments, render_table, Collars, EvalReport, Matching,
};
use condaudio::rng::substream;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;
type Criterion = (usize, &'static str, Option<Duration>, fn() -> Check);

fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

fn gauss(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| StandardNormal.sample(rng))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn criterion_1() -> Check {
    let mut rng = substream(101, "acceptance/class-object");
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (d, l, h) = (rng.random_range(1..=5), rng.random_range(1..=32), rng.random_range(1..=8));
        let label = LabelEmbedding { matrix: gauss(&mut rng, d, h) };
        let grid = TimestampGrid {
            grid: Array2::from_shape_fn((d, l), |_| u8::from(rng.random_bool(0.4))),
            frame_rate: 100.0,
        };
        let got = class_object(&label, &grid).map_err(|e| e.to_string())?.matrix;
        ensure(got.dim() == (l, h), || format!("shape {:?}, expected {:?}", got.dim(), (l, h)))?;
        for li in 0..l {
            for hi in 0..h {
                let mut want = 0.0;
                for di in 0..d {
                    want += label.matrix[[di, hi]] * f64::from(grid.grid[[di, li]]);
                }
                worst = worst.max((got[[li, hi]] - want).abs());
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("200 instances, max deviation {worst:.1e}"))
}

fn criterion_2() -> Check {
    let mut rng = substream(102, "acceptance/cfg");
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (r, c) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let cond = gauss(&mut rng, r, c);
        let uncond = gauss(&mut rng, r, c);
        let f = |w: f64| cfg_combine(&cond, &uncond, w).map_err(|e| e.to_string());
        ensure(f(1.0)? == cond, || "omega = 1 differs from the conditioned branch".into())?;
        ensure(f(0.0)? == uncond, || "omega = 0 differs from the unconditioned branch".into())?;
        let (w1, w2, a) = (rng.random_range(0.0..12.0), rng.random_range(0.0..12.0), rng.random_range(0.0..1.0));
        let mixed = f(a * w1 + (1.0 - a) * w2)?;
        let blend = f(w1)? * a + f(w2)? * (1.0 - a);
        worst = worst.max(max_abs_diff(&mixed, &blend));
        worst = worst.max(max_abs_diff(&f(w1)?, &(&uncond + &((&cond - &uncond) * w1))));
    }
    ensure(worst <= 1e-6, || format!("affine identity off by {worst:.3e}"))?;
    Ok(format!("omega 1 and 0 exact, affine deviation {worst:.1e}"))
}

fn random_control(model: &ToyModel, rng: &mut impl Rng, which: usize) -> ControlInput {
    let c = model.config();
    match which % 3 {
        0 => {
            let set = EventSet::new(vec!["dog".into(), "speech".into(), "bell".into()]).expect("classes");
            let class_vectors = class_embeddings(&set, &HashEmbeddings::new(c.label_dim, 0)).expect("embeddings");
            let grid = Array2::from_shape_fn((3, c.cond_len), |_| f64::from(u8::from(rng.random_bool(0.3))));
            ControlInput::Timestamp { grid, class_vectors }
        }
        1 => ControlInput::Pitch((0..c.cond_len).map(|_| rng.random_range(0..c.n_bins as u16)).collect()),
        _ => ControlInput::Energy((0..c.cond_len).map(|_| rng.random_range(0..c.n_bins as u16)).collect()),
    }
}

fn criterion_3() -> Check {
    let model = ToyModel::new(&ModelConfig::default()).map_err(|e| e.to_string())?;
    let c = model.config().clone();
    let mut rng = substream(103, "acceptance/zero-gate");
    let mut worst = 0.0f64;
    for i in 0..50 {
        let x = gauss(&mut rng, c.latent_t, c.latent_f);
        let t = rng.random_range(1..=c.diffusion_steps);
        let n_tokens = rng.random_range(1..=c.max_text_tokens);
        let text = TextEmbedding::new(gauss(&mut rng, n_tokens, c.text_dim)).map_err(|e| e.to_string())?;
        let emb = model.embed_control(&random_control(&model, &mut rng, i)).map_err(|e| e.to_string())?;
        let with = model
            .predict_noise(&x, t, TextCond::Caption(&text), ControlCond::Embedded(&emb))
            .map_err(|e| e.to_string())?;
        let without =
            model.predict_noise(&x, t, TextCond::Caption(&text), ControlCond::Absent).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&with, &without));
    }
    ensure(worst <= 1e-6, || format!("max difference {worst:.3e}"))?;
    Ok(format!("50 inputs, max difference {worst:.1e}"))
}

fn tiny() -> ModelConfig {
    ModelConfig {
        latent_t: 8,
        latent_f: 4,
        mel_bins: 8,
        hidden: 8,
        ffn_hidden: 8,
        text_dim: 4,
        max_text_tokens: 4,
        n_layers: 2,
        strides: vec![2, 4],
        cond_len: 8,
        n_bins: 8,
        label_dim: 3,
        diffusion_steps: 20,
        ..ModelConfig::default()
    }
}

fn tiny_batch(model: &ToyModel, rng: &mut impl Rng) -> Vec<TrainItem> {
    let c = model.config().clone();
    (0..4)
        .map(|i| TrainItem {
            x0: gauss(rng, c.latent_t, c.latent_f),
            t: 1 + (7 * i) % c.diffusion_steps,
            noise: gauss(rng, c.latent_t, c.latent_f),
            text: (i != 3).then(|| TextEmbedding::new(gauss(rng, 2, c.text_dim)).expect("finite tokens")),
            control: (i != 3).then(|| random_control(model, rng, i)),
        })
        .collect()
}

fn criterion_4() -> Check {
    let mut model = ToyModel::new(&tiny()).map_err(|e| e.to_string())?;
    let trainable = model.params().scalar_count(Role::Trainable);
    ensure(trainable <= 2000, || format!("{trainable} trainable scalars"))?;
    ensure(model.config().n_layers == 2, || "config is not 2-layer".into())?;
    model.set_gates(0.5);
    let mut rng = substream(104, "acceptance/fd");
    for name in ["encoder.position", "encoder.b1", "encoder.b2"] {
        let id = model.params().find(name).ok_or_else(|| format!("no parameter {name}"))?;
        let (r, c) = model.params().get(id).dim();
        model.set_param(name, Role::Trainable, gauss(&mut rng, r, c) * 0.3).map_err(|e| e.to_string())?;
    }
    let batch = tiny_batch(&model, &mut rng);
    let (_, grads) = loss_and_gradients(&model, &batch).map_err(|e| e.to_string())?;
    let h = 1e-3;
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for (id, g) in &grads.by_param {
        for idx in 0..g.len() {
            let mut probe = model.clone();
            let base = probe.params().get(*id).as_slice().expect("contiguous")[idx];
            probe.params_mut().get_mut(*id).as_slice_mut().expect("contiguous")[idx] = base + h;
            let up = loss_and_gradients(&probe, &batch).map_err(|e| e.to_string())?.0;
            probe.params_mut().get_mut(*id).as_slice_mut().expect("contiguous")[idx] = base - h;
            let down = loss_and_gradients(&probe, &batch).map_err(|e| e.to_string())?.0;
            let num = (up - down) / (2.0 * h);
            let ana = g.as_slice().expect("contiguous")[idx];
            worst = worst.max((num - ana).abs() / ana.abs().max(num.abs()).max(1e-6));
            checked += 1;
        }
    }
    ensure(checked == trainable, || format!("checked {checked} of {trainable} scalars"))?;
    ensure(worst <= 1e-2, || format!("worst relative error {worst:.3e}"))?;

    let mut model = ToyModel::new(&tiny()).map_err(|e| e.to_string())?;
    let frozen = model.params().snapshot_bytes(Role::Frozen);
    let mut opt = Optimizer::new(0.9, 1.0);
    for _ in 0..100 {
        let batch = tiny_batch(&model, &mut rng);
        train_step(&mut model, &mut opt, &batch, 0.05).map_err(|e| e.to_string())?;
    }
    ensure(model.params().snapshot_bytes(Role::Frozen) == frozen, || "frozen parameters changed".into())?;
    Ok(format!("{checked} scalars, worst relative error {worst:.1e}; frozen bytes unchanged after 100 steps"))
}

fn criterion_5() -> Check {
    let cfg = ToyConfig::default();
    ensure(cfg.model.seed == 7 && cfg.train.steps == 500, || "default config is not seed 7 / 500 steps".into())?;
    let mut model = ToyModel::new(&cfg.model).map_err(|e| e.to_string())?;
    let report = train_probe(&mut model, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
    let ratio = report.final_eval_loss / report.initial_eval_loss;
    let set = probe_eval_set(&model, &cfg).map_err(|e| e.to_string())?;
    let probe = evaluate_probe(&model, &set, 50, 5.0, cfg.model.seed).map_err(|e| e.to_string())?;
    let detail = format!(
        "loss {:.4} -> {:.4} (ratio {ratio:.3}), matching {:.3} vs shuffled {:.3} (gap {:.3})",
        report.initial_eval_loss,
        report.final_eval_loss,
        probe.matching,
        probe.shuffled,
        probe.gap()
    );
    ensure(ratio < 0.5, || detail.clone())?;
    ensure(probe.gap() >= 0.2, || detail.clone())?;
    Ok(detail)
}

fn hit(r: &Event, p: &Event) -> bool {
    let tol = 0.2f64.max(0.2 * (r.offset - r.onset));
    r.class == p.class && (r.onset - p.onset).abs() <= 0.2 + 1e-9 && (r.offset - p.offset).abs() <= tol + 1e-9
}

fn exhaustive_tp(refs: &[Event], preds: &[Event], used: &mut Vec<bool>) -> usize {
    let Some((r, rest)) = refs.split_first() else { return 0 };
    let mut best = exhaustive_tp(rest, preds, used);
    for j in 0..preds.len() {
        if !used[j] && hit(r, &preds[j]) {
            used[j] = true;
            best = best.max(1 + exhaustive_tp(rest, preds, used));
            used[j] = false;
        }
    }
    best
}

type Clips = Vec<(String, EventList)>;

fn brute_force_eb(refs: &Clips, preds: &Clips) -> f64 {
    let mut classes: Vec<String> =
        refs.iter().chain(preds).flat_map(|(_, e)| e.iter().map(|x| x.class.clone())).collect();
    classes.sort();
    classes.dedup();
    let mut total = 0.0;
    for class in &classes {
        let (mut tp, mut n) = (0, 0);
        for ((_, r), (_, p)) in refs.iter().zip(preds) {
            let r: Vec<Event> = r.iter().filter(|e| &e.class == class).cloned().collect();
            let p: Vec<Event> = p.iter().filter(|e| &e.class == class).cloned().collect();
            tp += exhaustive_tp(&r, &p, &mut vec![false; p.len()]);
            n += r.len() + p.len();
        }
        total += 200.0 * tp as f64 / n as f64;
    }
    total / classes.len() as f64
}

fn random_events(rng: &mut impl Rng, n: usize) -> EventList {
    (0..n)
        .map(|_| {
            let class = ["dog", "cat", "speech"][rng.random_range(0..3)];
            let onset = (rng.random_range(0.0..3.0f64) * 20.0).round() / 20.0;
            let dur = (rng.random_range(0.1..1.5f64) * 20.0).round() / 20.0;
            Event::new(class, onset, onset + dur)
        })
        .collect()
}

fn jitter(rng: &mut impl Rng, events: &EventList) -> EventList {
    let mut out = EventList::new();
    for e in events {
        if rng.random_bool(0.8) {
            let onset = (e.onset + rng.random_range(-0.3..0.3f64)).max(0.0);
            let offset = (e.offset + rng.random_range(-0.3..0.3f64)).max(onset + 0.05);
            out.push(Event::new(e.class.clone(), onset, offset));
        }
    }
    let extra = rng.random_range(0..2);
    out.extend(random_events(rng, extra));
    out.truncate(5);
    out
}

fn all_paths(a: &[f64], b: &[f64], i: usize, j: usize) -> Vec<(f64, usize)> {
    let here = (a[i] - b[j]).abs();
    if i + 1 == a.len() && j + 1 == b.len() {
        return vec![(here, 1)];
    }
    let mut out = Vec::new();
    for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
        if i + di < a.len() && j + dj < b.len() {
            out.extend(all_paths(a, b, i + di, j + dj).into_iter().map(|(c, l)| (c + here, l + 1)));
        }
    }
    out
}

fn brute_force_dtw(a: &[f64], b: &[f64]) -> f64 {
    let paths = all_paths(a, b, 0, 0);
    let best = paths.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let len = paths.iter().filter(|p| p.0 <= best + 1e-12).map(|p| p.1).min().expect("a path exists");
    best / len as f64
}

fn criterion_6() -> Check {
    let mut rng = substream(106, "acceptance/metrics");
    let mut instances = 0;
    while instances < 500 {
        let mut refs = Clips::new();
        for i in 0..rng.random_range(1..4) {
            let n = rng.random_range(0..=5);
            refs.push((format!("c{i}"), random_events(&mut rng, n)));
        }
        let preds: Clips = refs.iter().map(|(id, e)| (id.clone(), jitter(&mut rng, e))).collect();
        if refs.iter().chain(&preds).all(|(_, e)| e.is_empty()) {
            continue;
        }
        instances += 1;
        let got = event_based_scores(&refs, &preds, &Collars::default(), Matching::Optimal)
            .map_err(|e| e.to_string())?
            .macro_f1;
        let want = brute_force_eb(&refs, &preds);
        ensure((got - want).abs() < 1e-9, || format!("Eb {got} vs exhaustive {want} on {refs:?} / {preds:?}"))?;
    }

    let mut refs = Clips::new();
    for i in 0..20 {
        let n = rng.random_range(1..=5);
        refs.push((format!("p{i}"), random_events(&mut rng, n)));
    }
    let eb = event_based_scores(&refs, &refs, &Collars::default(), Matching::Optimal).map_err(|e| e.to_string())?;
    let at = clip_macro_f1(&refs, &refs).map_err(|e| e.to_string())?;
    let row = EvalReport {
        setting: "GT".into(),
        eb: Some(eb.macro_f1),
        at: Some(at.macro_f1),
        sigma: None,
        gamma: None,
        kappa: None,
        dtw: None,
        mae: None,
        eb_per_class: Vec::new(),
        at_per_class: Vec::new(),
        dtw_skipped: Vec::new(),
    };
    let table = render_table(&[row]);
    ensure(table.contains("| 100.00 | 100.00 |"), || format!("perfect predictions rendered as {table:?}"))?;

    for _ in 0..300 {
        let (n, m) = (rng.random_range(1..=7), rng.random_range(1..=7));
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let got = dtw(&a, &b).map_err(|e| e.to_string())?;
        let want = brute_force_dtw(&a, &b);
        ensure((got - want).abs() < 1e-9, || format!("DTW {got} vs enumeration {want} on {a:?} / {b:?}"))?;
    }

    let normals: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let m = moments(&normals).map_err(|e| e.to_string())?;
    ensure(
        (m.sigma - 1.0).abs() <= 0.05 && m.gamma.abs() <= 0.05 && (m.kappa - 3.0).abs() <= 0.05,
        || format!("moments {m:?}"),
    )?;

    let mut worst_mae = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(1..=2000);
        let gen = Contour::dense((0..n).map(|_| rng.random_range(0.0..2.0f32)).collect(), 100.0).expect("contour");
        let reference =
            Contour::dense((0..n).map(|_| rng.random_range(0.0..2.0f32)).collect(), 100.0).expect("contour");
        let g = log_quantize(&gen, 256, 1e-4, 2.0).map_err(|e| e.to_string())?;
        let r = log_quantize(&reference, 256, 1e-4, 2.0).map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        for i in 0..n {
            sum += (g.indices[i] as f64 / 255.0 - r.indices[i] as f64 / 255.0).abs();
        }
        let got = energy_mae(&g, &r).map_err(|e| e.to_string())?;
        worst_mae = worst_mae.max((got - sum / n as f64).abs());
    }
    ensure(worst_mae <= 1e-9, || format!("energy MAE off the loop by {worst_mae:.3e}"))?;
    Ok(format!(
        "500 Eb instances exact; perfect row 100.00/100.00; 300 DTW cases exact; moments ({:.3}, {:.3}, {:.3}); \
         MAE deviation {worst_mae:.1e}",
        m.sigma, m.gamma, m.kappa
    ))
}

fn criterion_7() -> Check {
    let mut rng = substream(107, "acceptance/dsp");
    let samples: Vec<f32> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
    let audio = AudioBuffer::new(samples.clone(), 16000).map_err(|e| e.to_string())?;
    let (n, hop) = (512, 128);
    let spec = stft_with(&audio, n, hop, Padding::None).map_err(|e| e.to_string())?;
    let w = hann_window(n);
    let mut worst_stft = 0.0f64;
    for (l, frame) in spec.frames().enumerate() {
        let windowed: Vec<f64> = (0..n).map(|j| samples[l * hop + j] as f64 * w[j]).collect();
        for (k, got) in frame.iter().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &x) in windowed.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            let err = ((got.re - re).powi(2) + (got.im - im).powi(2)).sqrt();
            worst_stft = worst_stft.max(err / (re * re + im * im).sqrt().max(1.0));
        }
    }
    ensure(worst_stft <= 1e-4, || format!("STFT relative error {worst_stft:.3e}"))?;

    let tone: Vec<f32> =
        (0..16000).map(|i| (0.5 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 16000.0).sin()) as f32).collect();
    let f0 = estimate_f0(&AudioBuffer::new(tone, 16000).map_err(|e| e.to_string())?, 40.0, 1600.0, 160)
        .map_err(|e| e.to_string())?;
    ensure(f0.voiced.iter().all(|&v| v), || format!("{} of {} frames voiced", f0.voiced_count(), f0.len()))?;
    let worst_f0 = f0.values.iter().fold(0.0f64, |m, &v| m.max((v as f64 - 220.0).abs()));
    ensure(worst_f0 <= 3.0, || format!("F0 off by {worst_f0:.2} Hz"))?;

    let values: Vec<f32> = (0..10_000).map(|_| rng.random_range(40f64.ln()..1600f64.ln()).exp() as f32).collect();
    let q = log_quantize(&Contour::from_hz(values.clone(), 100.0).map_err(|e| e.to_string())?, 256, 40.0, 1600.0)
        .map_err(|e| e.to_string())?;
    let back = log_dequantize(&q);
    let half = 0.5 * q.log_bin_width();
    let worst_q = values
        .iter()
        .zip(&back.values)
        .fold(0.0f64, |m, (v, r)| m.max(((*r as f64).ln() - (*v as f64).ln()).abs()));
    ensure(worst_q <= half + 1e-6, || format!("log error {worst_q:.4} > half bin {half:.4}"))?;

    let mut worst_cwt = 0.0f64;
    for _ in 0..20 {
        let comps: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| (rng.random_range(0.5..8.0), rng.random_range(0.0..6.3), rng.random_range(5.0..40.0)))
            .collect();
        let len = 1000;
        let hz: Vec<f32> = (0..len)
            .map(|i| {
                let t = i as f64 / len as f64;
                let wave: f64 = comps.iter().map(|(f, ph, a)| a * (2.0 * std::f64::consts::PI * f * t + ph).sin()).sum();
                (200.0 + wave) as f32
            })
            .collect();
        let c = Contour::from_hz(hz, 100.0).map_err(|e| e.to_string())?;
        let m = cwt_decompose(&c, 10).map_err(|e| e.to_string())?;
        let rec = cwt_reconstruct(&m).map_err(|e| e.to_string())?;
        let se: f64 = rec
            .values
            .iter()
            .zip(&c.values)
            .map(|(&r, &v)| (r as f64 - (v as f64 - m.mean) / m.std).powi(2))
            .sum();
        worst_cwt = worst_cwt.max((se / len as f64).sqrt());
    }
    ensure(worst_cwt <= 0.1, || format!("CWT round-trip RMSE {worst_cwt:.4}"))?;
    Ok(format!(
        "STFT {worst_stft:.1e}; F0 within {worst_f0:.2} Hz; quantize {worst_q:.4} <= {half:.4}; CWT RMSE {worst_cwt:.3}"
    ))
}

fn condaudio(dir: &Path, args: &[&str], threads: Option<&str>) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_condaudio"));
    cmd.current_dir(dir).args(args).env("RUST_LOG", "warn");
    match threads {
        Some(n) => cmd.env("CONDAUDIO_THREADS", n),
        None => cmd.env_remove("CONDAUDIO_THREADS"),
    };
    let out = cmd.output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("condaudio {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn pipeline(dir: &Path, threads: Option<&str>) -> Result<(), String> {
    let steps: [&[&str]; 7] = [
        &["fixtures", "--out", "fx", "--seed", "7"],
        &[
            "dataset", "build", "--labels", "fx/labels.tsv", "--captions", "fx/captions.json", "--audio-dir",
            "fx/audio", "--out", "ds",
        ],
        &["dataset", "split", "--manifest", "ds/manifest.jsonl", "--out", "ds/split.jsonl", "--counts", "8,1,1", "--seed", "7"],
        &["toy", "train", "--config", "fx/toy.toml", "--out", "toy"],
        &[
            "toy", "sweep", "--config", "fx/toy.toml", "--checkpoint", "toy/model.ckpt", "--out", "sweep", "--omegas",
            "1,3,5,10", "--steps", "10,50,100,200",
        ],
        &["extract", "fx/generated", "--out", "gen"],
        &[
            "eval", "--kind", "all", "--ref-events", "fx/labels.tsv", "--pred-events", "fx/pred_events.tsv",
            "--ref-contours", "ds/contours", "--gen-contours", "gen", "--out", "eval",
        ],
    ];
    for args in steps {
        condaudio(dir, args, threads)?;
    }
    Ok(())
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        std::fs::create_dir_all(d).map_err(|e| e.to_string())?;
    }
    pipeline(&a, None)?;
    pipeline(&b, Some("1"))?;
    let files = files_under(&a);
    ensure(files == files_under(&b), || "runs produced different file sets".into())?;
    for f in &files {
        let (x, y) = (std::fs::read(a.join(f)).map_err(|e| e.to_string())?, std::fs::read(b.join(f)).map_err(|e| e.to_string())?);
        ensure(x == y, || format!("{} differs between runs", f.display()))?;
    }
    for key in ["ds/manifest.jsonl", "ds/split.jsonl", "sweep/sweep.md", "sweep/sweep.json", "eval/report.json"] {
        ensure(files.contains(&PathBuf::from(key)), || format!("{key} was not written"))?;
    }

    let split = std::fs::read_to_string(a.join("ds/split.jsonl")).map_err(|e| e.to_string())?;
    let count = |s: &str| split.lines().filter(|l| l.contains(&format!("\"split\":\"{s}\""))).count();
    ensure((count("train"), count("valid"), count("test")) == (8, 1, 1), || {
        format!("split sizes {}/{}/{}", count("train"), count("valid"), count("test"))
    })?;
    let sweep: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("sweep/sweep.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let rows = sweep["rows"].as_array().ok_or("sweep.json has no rows")?;
    let axes: Vec<(f64, u64)> =
        rows.iter().map(|r| (r["omega"].as_f64().unwrap_or(-1.0), r["steps"].as_u64().unwrap_or(0))).collect();
    let want: Vec<(f64, u64)> =
        [1.0, 3.0, 5.0, 10.0].iter().flat_map(|&w| [10, 50, 100, 200].map(|s| (w, s))).collect();
    ensure(axes == want, || format!("sweep axes {axes:?}"))?;
    let clips = files.iter().filter(|f| f.to_string_lossy().ends_with(".wav")).count();
    ensure(clips <= 40, || format!("{clips} fixture WAV files"))?;
    Ok(format!("{} files byte-identical across two runs, 16 sweep rows", files.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "class object matches triple-loop oracle", Some(Duration::from_secs(1)), criterion_1),
        (2, "classifier-free guidance algebra", None, criterion_2),
        (3, "zero-gate identity at initialization", None, criterion_3),
        (4, "gradients match finite differences, frozen weights intact", Some(Duration::from_secs(120)), criterion_4),
        (5, "toy convergence and control following", Some(Duration::from_secs(300)), criterion_5),
        (6, "metric oracles", None, criterion_6),
        (7, "signal processing checks", None, criterion_7),
        (8, "pipeline determinism on the fixture corpus", Some(Duration::from_secs(180)), criterion_8),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, budget, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let result = match (result, budget) {
            (Ok(detail), Some(limit)) if elapsed > limit => {
                Err(format!("{detail}; took {:.2} s, budget {} s", elapsed.as_secs_f64(), limit.as_secs()))
            }
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {n}. {name}: {detail} [{:.2} s]", elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n}. {name}: {detail} [{:.2} s]", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
