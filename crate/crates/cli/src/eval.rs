use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use condaudio::dataset::{read_contour, ExtractConfig};
use condaudio::dsp::{log_quantize, Contour};
use condaudio::events::{parse_event_table, EventList};
use condaudio::metrics::{build_report, reference_row, render_table, ClipPair, Corpus, EvalOptions, Matching, PitchScale};
use serde_json::json;

use crate::util::{create_dir, load_extract_config, parse_list, usage, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Temporal,
    Pitch,
    Energy,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "all")]
    kind: Kind,
    /// Reference events (TSV).
    #[arg(long)]
    ref_events: Option<PathBuf>,
    /// Detected events of the generated clips (TSV).
    #[arg(long)]
    pred_events: Option<PathBuf>,
    /// Directory of reference `<id>.pitch.acnd` / `<id>.energy.acnd` files.
    #[arg(long)]
    ref_contours: Option<PathBuf>,
    /// Directory of contours extracted from generated clips.
    #[arg(long)]
    gen_contours: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Extraction settings the contours were made with (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Energy quantization range `MIN,MAX`; default tops out at the loudest reference frame.
    #[arg(long)]
    energy_range: Option<String>,
    #[arg(long, value_enum, default_value = "hz")]
    pitch_scale: ScaleArg,
    #[arg(long, value_enum, default_value = "optimal")]
    matching: MatchingArg,
    /// Row label of the scored system.
    #[arg(long, default_value = "Ours")]
    setting: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    Hz,
    LogHz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MatchingArg {
    Optimal,
    Greedy,
}

fn read_events(path: &Path) -> anyhow::Result<Vec<(String, EventList)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (clips, errors) = parse_event_table(&text);
    for e in &errors {
        log::warn!("{}: {e}", path.display());
    }
    Ok(clips.into_iter().collect())
}

/// `<id>.<kind>.acnd` files in `dir`, keyed by id.
fn read_contours(dir: &Path, kind: &str, frame_rate: f64) -> anyhow::Result<BTreeMap<String, Contour>> {
    if !dir.is_dir() {
        bail!("contour directory {} does not exist", dir.display());
    }
    let suffix = format!(".{kind}.acnd");
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(id) = name.strip_suffix(&suffix) {
            let (_, c) = read_contour(&path, frame_rate).with_context(|| format!("reading {}", path.display()))?;
            out.insert(id.to_string(), c);
        }
    }
    Ok(out)
}

fn pair_up(
    kind: &str,
    refs: BTreeMap<String, Contour>,
    mut gens: BTreeMap<String, Contour>,
) -> anyhow::Result<Vec<ClipPair<Contour>>> {
    let missing: Vec<&String> = refs.keys().filter(|id| !gens.contains_key(*id)).collect();
    let extra: Vec<&String> = gens.keys().filter(|id| !refs.contains_key(*id)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        bail!(
            "{kind} clip sets differ: missing generated {:?}, without reference {:?}",
            missing,
            extra
        );
    }
    if refs.is_empty() {
        bail!("no {kind} contours found");
    }
    Ok(refs
        .into_iter()
        .map(|(id, reference)| {
            let generated = gens.remove(&id).expect("checked above");
            ClipPair { id, generated, reference }
        })
        .collect())
}

fn need<'a>(flag: &str, value: &'a Option<PathBuf>) -> anyhow::Result<&'a Path> {
    value.as_deref().ok_or_else(|| usage(format!("--{flag} is required for this --kind")))
}

pub fn run(args: EvalArgs) -> anyhow::Result<()> {
    let config: ExtractConfig = load_extract_config(args.config.as_deref())?;
    let temporal = matches!(args.kind, Kind::Temporal | Kind::All);
    let pitch = matches!(args.kind, Kind::Pitch | Kind::All);
    let energy = matches!(args.kind, Kind::Energy | Kind::All);
    let options = EvalOptions {
        matching: match args.matching {
            MatchingArg::Optimal => Matching::Optimal,
            MatchingArg::Greedy => Matching::Greedy,
        },
        pitch_scale: match args.pitch_scale {
            ScaleArg::Hz => PitchScale::Hz,
            ScaleArg::LogHz => PitchScale::LogHz,
        },
        ..EvalOptions::default()
    };
    let energy_range: Option<[f64; 2]> = match &args.energy_range {
        None => None,
        Some(text) => match parse_list::<f64>(text).map_err(|e| usage(format!("--energy-range: {e}")))?[..] {
            [lo, hi] if lo > 0.0 && hi > lo => Some([lo, hi]),
            _ => return Err(usage(format!("--energy-range needs MIN,MAX with 0 < MIN < MAX, got {text:?}"))),
        },
    };

    let mut corpus = Corpus::default();
    if temporal {
        corpus.event_refs = read_events(need("ref-events", &args.ref_events)?)?;
        corpus.event_preds = read_events(need("pred-events", &args.pred_events)?)?;
    }
    let mut used_energy_range = None;
    if pitch || energy {
        let ref_dir = need("ref-contours", &args.ref_contours)?;
        let gen_dir = need("gen-contours", &args.gen_contours)?;
        let fr = config.frame_rate();
        if pitch {
            let refs = read_contours(ref_dir, "pitch", fr)?;
            let gens = read_contours(gen_dir, "pitch", fr)?;
            corpus.pitch = pair_up("pitch", refs, gens)?;
        }
        if energy {
            let pairs = pair_up("energy", read_contours(ref_dir, "energy", fr)?, read_contours(gen_dir, "energy", fr)?)?;
            let [lo, hi] = energy_range.unwrap_or_else(|| {
                let top = pairs
                    .iter()
                    .flat_map(|p| p.reference.values.iter())
                    .fold(0f64, |m, &v| m.max(v as f64));
                [config.energy_min, if top > config.energy_min { top } else { config.energy_min * 10.0 }]
            });
            used_energy_range = Some([lo, hi]);
            let q = |c: &Contour| log_quantize(c, config.n_bins, lo, hi);
            corpus.energy = pairs
                .iter()
                .map(|p| Ok(ClipPair { id: p.id.clone(), generated: q(&p.generated)?, reference: q(&p.reference)? }))
                .collect::<anyhow::Result<_>>()?;
        }
    }

    let ours = build_report(&args.setting, &corpus, &options)?;
    let mut gt = reference_row("GT", &corpus)?;
    if temporal {
        let self_scored = Corpus {
            event_refs: corpus.event_refs.clone(),
            event_preds: corpus.event_refs.clone(),
            ..Corpus::default()
        };
        let r = build_report("GT", &self_scored, &options)?;
        (gt.eb, gt.at, gt.eb_per_class, gt.at_per_class) = (r.eb, r.at, r.eb_per_class, r.at_per_class);
    }
    let rows = vec![gt, ours];
    let table = render_table(&rows);

    create_dir(&args.out)?;
    std::fs::write(args.out.join("report.txt"), &table)?;
    write_json(
        &args.out.join("report.json"),
        &json!({
            "kind": format!("{:?}", args.kind).to_lowercase(),
            "options": options,
            "energy_range": used_energy_range,
            "clips": {
                "events": corpus.event_refs.len(),
                "pitch": corpus.pitch.len(),
                "energy": corpus.energy.len(),
            },
            "rows": rows,
        }),
    )?;
    print!("{table}");
    Ok(())
}
