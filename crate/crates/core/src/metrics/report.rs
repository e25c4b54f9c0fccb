use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_unique, clip_macro_f1, energy_mae, event_based_scores, moments, pitch_dtw, ClassScore, Collars, Matching,
    MetricsError, PitchScale, Result,
};
use crate::dsp::{Contour, QuantizedContour};
use crate::events::EventList;

/// A generated condition and its reference for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPair<T> {
    pub id: String,
    pub generated: T,
    pub reference: T,
}

/// Everything measured for one system. Empty parts are skipped.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub event_refs: Vec<(String, EventList)>,
    pub event_preds: Vec<(String, EventList)>,
    pub pitch: Vec<ClipPair<Contour>>,
    pub energy: Vec<ClipPair<QuantizedContour>>,
}

impl Corpus {
    fn is_empty(&self) -> bool {
        self.event_refs.is_empty() && self.event_preds.is_empty() && self.pitch.is_empty() && self.energy.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub collars: Collars,
    pub matching: Matching,
    pub pitch_scale: PitchScale,
}

/// One row of the controllability table plus per-class detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: String,
    pub eb: Option<f64>,
    pub at: Option<f64>,
    pub sigma: Option<f64>,
    pub gamma: Option<f64>,
    pub kappa: Option<f64>,
    pub dtw: Option<f64>,
    pub mae: Option<f64>,
    pub eb_per_class: Vec<ClassScore>,
    pub at_per_class: Vec<ClassScore>,
    /// Pitch clips left out of the DTW mean for lacking voiced frames.
    pub dtw_skipped: Vec<String>,
}

impl EvalReport {
    fn empty(setting: &str) -> Self {
        Self {
            setting: setting.to_string(),
            eb: None,
            at: None,
            sigma: None,
            gamma: None,
            kappa: None,
            dtw: None,
            mae: None,
            eb_per_class: Vec::new(),
            at_per_class: Vec::new(),
            dtw_skipped: Vec::new(),
        }
    }
}

fn keyed<T>(pairs: &[ClipPair<T>]) -> Vec<(String, ())> {
    pairs.iter().map(|p| (p.id.clone(), ())).collect()
}

/// Scores a corpus. Pitch moments pool the voiced frames of every
/// generated clip; DTW and MAE are per-clip means.
pub fn build_report(setting: &str, corpus: &Corpus, options: &EvalOptions) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(MetricsError::Empty("corpus has no clips".into()));
    }
    let mut report = EvalReport::empty(setting);
    if !corpus.event_refs.is_empty() || !corpus.event_preds.is_empty() {
        let eb = event_based_scores(&corpus.event_refs, &corpus.event_preds, &options.collars, options.matching)?;
        let at = clip_macro_f1(&corpus.event_refs, &corpus.event_preds)?;
        report.eb = Some(eb.macro_f1);
        report.at = Some(at.macro_f1);
        report.eb_per_class = eb.per_class;
        report.at_per_class = at.per_class;
    }
    if !corpus.pitch.is_empty() {
        check_unique(&keyed(&corpus.pitch))?;
        let pooled: Vec<f64> =
            corpus.pitch.iter().flat_map(|p| p.generated.voiced_values().map(f64::from)).collect();
        let m = moments(&pooled)?;
        (report.sigma, report.gamma, report.kappa) = (Some(m.sigma), Some(m.gamma), Some(m.kappa));
        let per_clip: Vec<Option<f64>> = corpus
            .pitch
            .par_iter()
            .map(|p| {
                if p.generated.voiced_count() == 0 || p.reference.voiced_count() == 0 {
                    Ok(None)
                } else {
                    pitch_dtw(&p.generated, &p.reference, options.pitch_scale).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        report.dtw_skipped =
            corpus.pitch.iter().zip(&per_clip).filter(|(_, d)| d.is_none()).map(|(p, _)| p.id.clone()).collect();
        let kept: Vec<f64> = per_clip.into_iter().flatten().collect();
        if !kept.is_empty() {
            report.dtw = Some(kept.iter().sum::<f64>() / kept.len() as f64);
        }
    }
    if !corpus.energy.is_empty() {
        check_unique(&keyed(&corpus.energy))?;
        let per_clip: Vec<f64> =
            corpus.energy.par_iter().map(|p| energy_mae(&p.generated, &p.reference)).collect::<Result<_>>()?;
        report.mae = Some(per_clip.iter().sum::<f64>() / per_clip.len() as f64);
    }
    Ok(report)
}

/// Reference-side row: pitch moments of the reference contours only.
pub fn reference_row(setting: &str, corpus: &Corpus) -> Result<EvalReport> {
    let mut report = EvalReport::empty(setting);
    if !corpus.pitch.is_empty() {
        let pooled: Vec<f64> =
            corpus.pitch.iter().flat_map(|p| p.reference.voiced_values().map(f64::from)).collect();
        let m = moments(&pooled)?;
        (report.sigma, report.gamma, report.kappa) = (Some(m.sigma), Some(m.gamma), Some(m.kappa));
    }
    Ok(report)
}

const PLACEHOLDER: &str = "\u{2212}";

type Column = (&'static str, fn(&EvalReport) -> Option<f64>, usize);

const COLUMNS: [Column; 7] = [
    ("Eb \u{2191}", |r| r.eb, 2),
    ("At \u{2191}", |r| r.at, 2),
    ("\u{3c3}", |r| r.sigma, 2),
    ("\u{3b3}", |r| r.gamma, 2),
    ("\u{3ba}", |r| r.kappa, 2),
    ("DTW \u{2193}", |r| r.dtw, 2),
    ("MAE \u{2193}", |r| r.mae, 3),
];

/// Renders rows as an aligned pipe table. A column appears when any row
/// has a value for it; missing cells show a minus sign.
pub fn render_table(rows: &[EvalReport]) -> String {
    let columns: Vec<&Column> = COLUMNS.iter().filter(|(_, get, _)| rows.iter().any(|r| get(r).is_some())).collect();
    let mut cells: Vec<Vec<String>> = vec![std::iter::once("Settings".to_string())
        .chain(columns.iter().map(|(name, _, _)| name.to_string()))
        .collect()];
    for r in rows {
        let mut line = vec![r.setting.clone()];
        for (_, get, digits) in &columns {
            line.push(get(r).map_or_else(|| PLACEHOLDER.to_string(), |v| format!("{v:.digits$}")));
        }
        cells.push(line);
    }
    let widths: Vec<usize> =
        (0..cells[0].len()).map(|c| cells.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, line) in cells.iter().enumerate() {
        let padded: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| {
                let pad = " ".repeat(w - cell.chars().count());
                if c == 0 {
                    format!("{cell}{pad}")
                } else {
                    format!("{pad}{cell}")
                }
            })
            .collect();
        out.push_str(&format!("| {} |\n", padded.join(" | ")));
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
        }
    }
    out
}
