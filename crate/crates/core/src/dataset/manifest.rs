use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{write_contour, AcndKind, DatasetError, ExtractConfig, Extracted, Result};
use crate::events::{parse_event_table, ClipEvents, EventList, RowError};
use crate::rng::substream;

const MANIFEST_FORMAT: &str = "condaudio-manifest/1";

/// Strong labels grouped by clip, plus the rows that could not be used.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StrongLabels {
    pub clips: ClipEvents,
    pub errors: Vec<RowError>,
}

/// Reads `segment_id<TAB>start<TAB>end<TAB>label` rows (header optional).
pub fn parse_strong_labels(text: &str) -> StrongLabels {
    let (clips, errors) = parse_event_table(text);
    StrongLabels { clips, errors }
}

/// Loads an `{ "id": "caption", ... }` JSON object.
pub fn load_captions(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
    /// Left over when the split counts do not cover every record.
    Unused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    /// Relative to the audio directory given at build time.
    pub audio_path: String,
    pub caption: String,
    pub events: EventList,
    /// Relative to the manifest directory.
    pub pitch_ref: String,
    pub energy_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// Everything that determines the stored contours and their quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub digest: String,
    pub config: ExtractConfig,
    pub event_set: Vec<String>,
    pub pitch_range: [f64; 2],
    pub energy_range: [f64; 2],
}

impl ManifestHeader {
    fn new(config: ExtractConfig, event_set: Vec<String>, energy_max: f64) -> Self {
        let mut header = Self {
            format: MANIFEST_FORMAT.into(),
            digest: String::new(),
            pitch_range: [config.f_min, config.f_max],
            energy_range: [config.energy_min, energy_max],
            config,
            event_set,
        };
        header.digest = header.compute_digest();
        header
    }

    fn compute_digest(&self) -> String {
        let body = serde_json::json!({
            "config": self.config,
            "event_set": self.event_set,
            "pitch_range": self.pitch_range,
            "energy_range": self.energy_range,
        });
        let hash = Sha256::digest(serde_json::to_vec(&body).expect("header serializes"));
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Header line followed by one record per line, records sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader =
            serde_json::from_str(lines.next().ok_or_else(|| DatasetError::Format("empty manifest".into()))?)?;
        if header.format != MANIFEST_FORMAT {
            return Err(DatasetError::Format(format!("unknown manifest format {:?}", header.format)));
        }
        if header.digest != header.compute_digest() {
            return Err(DatasetError::Format("manifest digest does not match its configuration".into()));
        }
        let records: Vec<ClipRecord> = lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
        let mut seen = BTreeSet::new();
        if let Some(dup) = records.iter().find(|r| !seen.insert(r.id.as_str())) {
            return Err(DatasetError::Format(format!("duplicate clip id {:?}", dup.id)));
        }
        Ok(Self { header, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

/// Summary written next to the manifest as `build-report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub digest: String,
    pub considered: usize,
    pub records: usize,
    pub contour_files: usize,
    pub energy_range: [f64; 2],
    pub excluded: Vec<Exclusion>,
    pub label_errors: Vec<RowError>,
}

fn usable_file_stem(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\', '\0'])
}

/// Extracts every labeled clip that has a caption and readable audio
/// (`<audio_dir>/<id>.wav`), then writes `contours/<id>.{pitch,energy}.acnd`,
/// `manifest.jsonl` and `build-report.json` under `out_dir`. The energy
/// quantization range tops out at the loudest frame of the built corpus.
pub fn build_manifest(
    labels: &StrongLabels,
    captions: &BTreeMap<String, String>,
    audio_dir: &Path,
    out_dir: &Path,
    config: &ExtractConfig,
) -> Result<(Manifest, BuildReport)> {
    config.validate()?;
    let mut excluded = Vec::new();
    let mut candidates = Vec::new();
    for (id, events) in &labels.clips {
        let reason = if !usable_file_stem(id) {
            Some("clip id is not usable as a file name".to_string())
        } else if !captions.contains_key(id) {
            Some("missing caption".to_string())
        } else if let Some(e) = events.iter().find(|e| e.offset > config.clip_seconds + 1e-9) {
            Some(format!("event {:?} ends at {} s, after the {} s clip", e.class, e.offset, config.clip_seconds))
        } else if !audio_dir.join(format!("{id}.wav")).is_file() {
            Some("missing audio file".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => excluded.push(Exclusion { id: id.clone(), reason }),
            None => candidates.push((id, events)),
        }
    }

    let extracted: Vec<Result<Extracted>> =
        candidates.par_iter().map(|(id, _)| config.extract_file(audio_dir.join(format!("{id}.wav")))).collect();

    let contour_dir = out_dir.join("contours");
    std::fs::create_dir_all(&contour_dir)?;
    let expected = config.n_frames();
    let mut records = Vec::new();
    let mut energy_max = 0f64;
    let mut kept: Vec<(&String, &EventList, Extracted)> = Vec::new();
    for ((id, events), result) in candidates.into_iter().zip(extracted) {
        match result {
            Ok(x) => {
                for (kind, c) in [("pitch", &x.pitch), ("energy", &x.energy)] {
                    if c.len() != expected {
                        return Err(DatasetError::Length { id: id.clone(), kind, expected, got: c.len() });
                    }
                }
                energy_max = x.energy.values.iter().fold(energy_max, |m, &v| m.max(v as f64));
                kept.push((id, events, x));
            }
            Err(e) => excluded.push(Exclusion { id: id.clone(), reason: format!("unreadable audio: {e}") }),
        }
    }
    for (id, events, x) in &kept {
        let pitch_ref = format!("contours/{id}.pitch.acnd");
        let energy_ref = format!("contours/{id}.energy.acnd");
        write_contour(out_dir.join(&pitch_ref), AcndKind::Pitch, &x.pitch)?;
        write_contour(out_dir.join(&energy_ref), AcndKind::Energy, &x.energy)?;
        records.push(ClipRecord {
            id: id.to_string(),
            audio_path: format!("{id}.wav"),
            caption: captions[id.as_str()].clone(),
            events: events.to_vec(),
            pitch_ref,
            energy_ref,
            split: None,
        });
    }
    excluded.sort_by(|a, b| a.id.cmp(&b.id));
    for e in &excluded {
        log::warn!("excluding clip {}: {}", e.id, e.reason);
    }

    let event_set: BTreeSet<String> = records.iter().flat_map(|r| r.events.iter().map(|e| e.class.clone())).collect();
    let energy_top = if energy_max > config.energy_min { energy_max } else { config.energy_min * 10.0 };
    let header = ManifestHeader::new(config.clone(), event_set.into_iter().collect(), energy_top);
    let manifest = Manifest { header, records };
    let report = BuildReport {
        digest: manifest.header.digest.clone(),
        considered: labels.clips.len(),
        records: manifest.records.len(),
        contour_files: 2 * manifest.records.len(),
        energy_range: manifest.header.energy_range,
        excluded,
        label_errors: labels.errors.clone(),
    };
    manifest.write(out_dir.join("manifest.jsonl"))?;
    let mut report_json = serde_json::to_string_pretty(&report)?;
    report_json.push('\n');
    std::fs::write(out_dir.join("build-report.json"), report_json)?;
    Ok((manifest, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

/// Shuffles records with the seed and assigns test, then valid, then
/// train. With an allowlist, test clips must contain an allowlisted class.
/// Records beyond the requested counts are marked [`Split::Unused`].
pub fn split_manifest(
    manifest: &Manifest,
    counts: SplitCounts,
    seed: u64,
    allowlist: Option<&BTreeSet<String>>,
) -> Result<Manifest> {
    let n = manifest.records.len();
    let requested = || format!("{}/{}/{}", counts.train, counts.valid, counts.test);
    if counts.total() > n {
        return Err(DatasetError::Counts { requested: requested(), available: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| manifest.records[a].id.cmp(&manifest.records[b].id));
    order.shuffle(&mut substream(seed, "split"));

    let eligible = |i: usize| {
        allowlist.is_none_or(|allow| manifest.records[i].events.iter().any(|e| allow.contains(&e.class)))
    };
    let test: Vec<usize> = order.iter().copied().filter(|&i| eligible(i)).take(counts.test).collect();
    if test.len() < counts.test {
        return Err(DatasetError::Counts { requested: requested(), available: test.len() });
    }
    let mut assignment = vec![Split::Unused; n];
    for &i in &test {
        assignment[i] = Split::Test;
    }
    let rest: Vec<usize> = order.into_iter().filter(|i| !test.contains(i)).collect();
    for (k, &i) in rest.iter().enumerate() {
        assignment[i] = if k < counts.valid {
            Split::Valid
        } else if k < counts.valid + counts.train {
            Split::Train
        } else {
            Split::Unused
        };
    }
    let mut out = manifest.clone();
    for (r, s) in out.records.iter_mut().zip(assignment) {
        r.split = Some(s);
    }
    Ok(out)
}
