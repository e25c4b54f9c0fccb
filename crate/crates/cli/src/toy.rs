use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Subcommand;
use condaudio::dataset::{write_acnd, AcndArray, AcndKind};
use condaudio::ldm::probe::{format_sweep, probe_eval_set, sweep, train_probe};
use condaudio::ldm::{
    load_checkpoint, sample, save_checkpoint, ControlCond, ControlKind, TextCond, ToyConfig, ToyModel,
};
use condaudio::rng::substream;
use serde_json::json;

use crate::util::{create_dir, parse_list, usage, write_json};

#[derive(Debug, Subcommand)]
pub enum ToyCommand {
    /// Train the control path on the synthetic probe task.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the model seed (initialization, data and dropout).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw one latent for a probe example.
    Sample {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sampler seed, default the model seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        omega: Option<f64>,
        /// timestamp, pitch or energy; omit for caption-only sampling.
        #[arg(long)]
        control: Option<String>,
        /// Probe evaluation example supplying caption and control.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Probe scores over a guidance by step-count grid.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sampler seed, default the model seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "1,3,5,10")]
        omegas: String,
        #[arg(long, default_value = "10,50,100,200")]
        steps: String,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ToyConfig> {
    let config = match path {
        Some(p) => ToyConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ToyConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_model(config: &ToyConfig, checkpoint: &Path) -> anyhow::Result<ToyModel> {
    load_checkpoint(checkpoint, &config.model).with_context(|| format!("loading {}", checkpoint.display()))
}

pub fn run(cmd: ToyCommand) -> anyhow::Result<()> {
    match cmd {
        ToyCommand::Train { config, out, seed } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(s) = seed {
                config.model.seed = s;
            }
            log::info!("seed: {}", config.model.seed);
            create_dir(&out)?;
            std::fs::write(out.join("config.toml"), config.to_toml())?;
            let mut model = ToyModel::new(&config.model)?;
            let log_every = config.train.log_every.max(1);
            let report = train_probe(&mut model, &config, |step, loss| {
                if (step + 1) % log_every == 0 {
                    log::info!("step {}: loss {loss:.5}", step + 1);
                }
            })?;
            let mut csv = String::from("step,loss\n");
            for (i, l) in report.losses.iter().enumerate() {
                writeln!(csv, "{},{l}", i + 1)?;
            }
            std::fs::write(out.join("loss.csv"), csv)?;
            save_checkpoint(&model, out.join("model.ckpt"))?;
            write_json(
                &out.join("train-report.json"),
                &json!({
                    "seed": config.model.seed,
                    "config_digest": hex(&config.model.digest()),
                    "steps": report.losses.len(),
                    "initial_eval_loss": report.initial_eval_loss,
                    "final_eval_loss": report.final_eval_loss,
                    "loss_ratio": report.final_eval_loss / report.initial_eval_loss,
                }),
            )?;
            println!(
                "held-out loss {:.5} -> {:.5} after {} steps",
                report.initial_eval_loss,
                report.final_eval_loss,
                report.losses.len()
            );
            Ok(())
        }
        ToyCommand::Sample { config, checkpoint, out, seed, steps, omega, control, index } => {
            let config = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(config.model.seed);
            let steps = steps.unwrap_or(config.probe.sample_steps);
            let omega = omega.unwrap_or(config.probe.omega);
            let kind: Option<ControlKind> = control.as_deref().map(str::parse).transpose()?;
            log::info!("seed: {seed}");
            let model = load_model(&config, &checkpoint)?;
            let set = probe_eval_set(&model, &config)?;
            let example = set
                .get(index)
                .ok_or_else(|| usage(format!("--index {index} outside the {} probe examples", set.len())))?;
            let emb = kind.map(|k| model.embed_control(&example.control(k))).transpose()?;
            let control_cond = emb.as_ref().map_or(ControlCond::Absent, ControlCond::Embedded);
            let mut rng = substream(seed, "cli/sample");
            let latent = sample(&model, TextCond::Caption(&example.text), control_cond, steps, omega, &mut rng)?;
            create_dir(&out)?;
            write_acnd(out.join("latent.acnd"), &AcndArray::from_matrix(AcndKind::Latent, &latent))?;
            write_json(
                &out.join("sample.json"),
                &json!({
                    "seed": seed,
                    "steps": steps,
                    "omega": omega,
                    "control": kind.map(|k| k.name()),
                    "index": index,
                    "config_digest": hex(&config.model.digest()),
                    "shape": [latent.nrows(), latent.ncols()],
                }),
            )?;
            println!("latent {} x {} written to {}", latent.nrows(), latent.ncols(), out.display());
            Ok(())
        }
        ToyCommand::Sweep { config, checkpoint, out, seed, omegas, steps } => {
            let config = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(config.model.seed);
            let omegas: Vec<f64> = parse_list(&omegas).map_err(|e| usage(format!("--omegas: {e}")))?;
            let steps: Vec<usize> = parse_list(&steps).map_err(|e| usage(format!("--steps: {e}")))?;
            log::info!("seed: {seed}");
            let model = load_model(&config, &checkpoint)?;
            let set = probe_eval_set(&model, &config)?;
            let rows = sweep(&model, &set, &omegas, &steps, seed)?;
            create_dir(&out)?;
            let table = format_sweep(&rows);
            std::fs::write(out.join("sweep.md"), &table)?;
            write_json(
                &out.join("sweep.json"),
                &json!({
                    "seed": seed,
                    "config_digest": hex(&config.model.digest()),
                    "eval_samples": set.len(),
                    "rows": rows,
                }),
            )?;
            print!("{table}");
            Ok(())
        }
    }
}
