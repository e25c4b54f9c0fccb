use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use condaudio::conditions::{events_to_grid, EventSet};
use condaudio::dataset::{parse_strong_labels, write_acnd, write_contour, AcndArray, AcndKind, ExtractConfig};
use condaudio::events::ClipEvents;
use rayon::prelude::*;
use serde_json::json;

use crate::util::{create_dir, describe, file_name, load_extract_config, usage, write_json};

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// A WAV file or a directory of WAV files.
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Extraction settings (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Strong labels; clips listed here also get an event grid.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Comma-separated grid classes, default the classes in the labels.
    #[arg(long, requires = "labels")]
    classes: Option<String>,
}

fn list_inputs(input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        bail!("input {} does not exist", input.display());
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(input).with_context(|| format!("listing {}", input.display()))? {
        let path = entry?.path();
        let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

struct Grids {
    set: EventSet,
    clips: ClipEvents,
}

fn load_grids(args: &ExtractArgs) -> anyhow::Result<Option<Grids>> {
    let Some(path) = &args.labels else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let labels = parse_strong_labels(&text);
    for e in &labels.errors {
        log::warn!("{}: {e}", path.display());
    }
    let classes: Vec<String> = match &args.classes {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => {
            let all: std::collections::BTreeSet<String> =
                labels.clips.values().flatten().map(|e| e.class.clone()).collect();
            all.into_iter().collect()
        }
    };
    let set = EventSet::new(classes).map_err(|e| usage(format!("grid classes: {e}")))?;
    Ok(Some(Grids { set, clips: labels.clips }))
}

fn extract_one(
    path: &Path,
    out: &Path,
    config: &ExtractConfig,
    grids: Option<&Grids>,
) -> anyhow::Result<serde_json::Value> {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let x = config.extract_file(path)?;
    let mut outputs = vec![format!("{stem}.pitch.acnd"), format!("{stem}.energy.acnd")];
    write_contour(out.join(&outputs[0]), AcndKind::Pitch, &x.pitch)?;
    write_contour(out.join(&outputs[1]), AcndKind::Energy, &x.energy)?;
    if let Some(events) = grids.and_then(|g| g.clips.get(&stem)) {
        let g = grids.expect("grids present");
        let grid = events_to_grid(events, &g.set, config.frame_rate(), config.n_frames())?;
        let name = format!("{stem}.grid.acnd");
        write_acnd(out.join(&name), &AcndArray::from_matrix(AcndKind::Grid, &grid.as_f64()))?;
        outputs.push(name);
    }
    Ok(json!({
        "id": stem,
        "input": file_name(path),
        "frames": x.pitch.len(),
        "voiced_frames": x.pitch.voiced_count(),
        "outputs": outputs,
    }))
}

pub fn run(args: ExtractArgs) -> anyhow::Result<()> {
    let config = load_extract_config(args.config.as_deref())?;
    let grids = load_grids(&args)?;
    let inputs = list_inputs(&args.input)?;
    create_dir(&args.out)?;
    log::info!("extracting {} file(s) into {}", inputs.len(), args.out.display());

    let results: Vec<anyhow::Result<serde_json::Value>> =
        inputs.par_iter().map(|p| extract_one(p, &args.out, &config, grids.as_ref())).collect();
    let mut files = Vec::new();
    let mut errors = Vec::new();
    for (path, result) in inputs.iter().zip(results) {
        match result {
            Ok(entry) => files.push(entry),
            Err(e) => {
                let message = describe(&e);
                log::error!("{}: {message}", path.display());
                errors.push(json!({ "input": file_name(path), "error": message }));
            }
        }
    }
    let summary = json!({
        "config": config,
        "frame_rate": config.frame_rate(),
        "n_frames": config.n_frames(),
        "grid_classes": grids.as_ref().map(|g| g.set.classes().to_vec()),
        "extracted": files.len(),
        "failed": errors.len(),
        "files": files,
        "errors": errors,
    });
    write_json(&args.out.join("summary.json"), &summary)?;
    println!("extracted {} file(s), {} failed", files.len(), errors.len());
    if !errors.is_empty() {
        let names: Vec<String> = errors.iter().map(|e| e["input"].as_str().unwrap_or("").to_string()).collect();
        bail!("could not extract {}", names.join(", "));
    }
    Ok(())
}
