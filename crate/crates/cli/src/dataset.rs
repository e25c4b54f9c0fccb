use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::Context;
use clap::Subcommand;
use condaudio::dataset::{build_manifest, load_captions, parse_strong_labels, split_manifest, Manifest, Split, SplitCounts};
use serde_json::json;

use crate::util::{create_dir, load_extract_config, parse_list, usage, write_json};

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Extract every usable clip and write a manifest.
    Build {
        #[arg(long)]
        labels: PathBuf,
        /// JSON object mapping clip ids to captions.
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        audio_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Assign train, valid and test splits.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Output manifest path.
        #[arg(long)]
        out: PathBuf,
        /// Train, valid and test sizes.
        #[arg(long, default_value = "8,1,1")]
        counts: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Comma-separated classes; test clips must contain one of them.
        #[arg(long)]
        allow: Option<String>,
    },
}

pub fn run(cmd: DatasetCommand) -> anyhow::Result<()> {
    match cmd {
        DatasetCommand::Build { labels, captions, audio_dir, out, config } => {
            let config = load_extract_config(config.as_deref())?;
            let text = std::fs::read_to_string(&labels).with_context(|| format!("reading {}", labels.display()))?;
            let labels_parsed = parse_strong_labels(&text);
            for e in &labels_parsed.errors {
                log::warn!("{}: {e}", labels.display());
            }
            let captions = load_captions(&captions).with_context(|| format!("reading {}", captions.display()))?;
            create_dir(&out)?;
            let (manifest, report) = build_manifest(&labels_parsed, &captions, &audio_dir, &out, &config)?;
            println!(
                "built {} record(s) from {} labeled clip(s), {} excluded, digest {}",
                manifest.records.len(),
                report.considered,
                report.excluded.len(),
                report.digest
            );
            Ok(())
        }
        DatasetCommand::Split { manifest, out, counts, seed, allow } => {
            log::info!("seed: {seed}");
            let c: Vec<usize> = parse_list(&counts).map_err(|e| usage(format!("--counts: {e}")))?;
            let [train, valid, test] = c[..] else {
                return Err(usage(format!("--counts needs three values, got {counts:?}")));
            };
            let allow: Option<BTreeSet<String>> =
                allow.map(|a| a.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
            let input = Manifest::read(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
            let split = split_manifest(&input, SplitCounts { train, valid, test }, seed, allow.as_ref())?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            split.write(&out)?;
            let count = |s: Split| split.records_in(s).count();
            let ids = |s: Split| split.records_in(s).map(|r| r.id.clone()).collect::<Vec<_>>();
            let summary = json!({
                "seed": seed,
                "counts": { "train": train, "valid": valid, "test": test },
                "allowlist": allow,
                "train": ids(Split::Train),
                "valid": ids(Split::Valid),
                "test": ids(Split::Test),
                "unused": ids(Split::Unused),
            });
            write_json(&out.with_extension("split.json"), &summary)?;
            println!(
                "train {} / valid {} / test {} / unused {}",
                count(Split::Train),
                count(Split::Valid),
                count(Split::Test),
                count(Split::Unused)
            );
            Ok(())
        }
    }
}
