//! `condaudio`: extraction, dataset construction, toy-model training,
//! sampling and sweeps, and controllability evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
//! `CONDAUDIO_THREADS` caps the worker pool.

mod dataset;
mod eval;
mod extract;
mod toy;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use util::{exit_code, UsageError};

#[derive(Debug, Parser)]
#[command(name = "condaudio", version, about = "Conditional audio generation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract pitch, energy and optional event grids from WAV files.
    Extract(extract::ExtractArgs),
    /// Build or split a dataset manifest.
    #[command(subcommand)]
    Dataset(dataset::DatasetCommand),
    /// Train, sample from or sweep the toy latent diffusion model.
    #[command(subcommand)]
    Toy(toy::ToyCommand),
    /// Score generated conditions against references.
    Eval(eval::EvalArgs),
    /// Write the synthetic fixture corpus.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("CONDAUDIO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("CONDAUDIO_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    log::debug!("worker threads: {n}");
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Extract(args) => extract::run(args),
        Command::Dataset(cmd) => dataset::run(cmd),
        Command::Toy(cmd) => toy::run(cmd),
        Command::Eval(args) => eval::run(args),
        Command::Fixtures { out, seed } => {
            log::info!("seed: {seed}");
            let corpus = condaudio::dataset::write_fixture_corpus(&out, seed)?;
            println!("fixture corpus written to {}", corpus.root.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", util::describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
