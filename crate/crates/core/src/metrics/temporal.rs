use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_unique, MetricsError, Result};
use crate::events::{Event, EventList};

/// Slack on collar comparisons, absorbing decimal round-off in event times.
const TIME_EPS: f64 = 1e-9;

/// Matching tolerances in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collars {
    pub onset: f64,
    /// Minimum offset tolerance.
    pub offset: f64,
    /// Offset tolerance as a fraction of the reference duration.
    pub offset_ratio: f64,
}

impl Default for Collars {
    fn default() -> Self {
        Self { onset: 0.2, offset: 0.2, offset_ratio: 0.2 }
    }
}

impl Collars {
    fn validate(&self) -> Result<()> {
        if !(self.onset > 0.0 && self.offset > 0.0 && self.offset_ratio >= 0.0) {
            return Err(MetricsError::Parameter(format!("collars must be positive, got {self:?}")));
        }
        Ok(())
    }

    /// True when `pred` hits `reference` within both collars.
    pub fn matches(&self, reference: &Event, pred: &Event) -> bool {
        let offset_tol = self.offset.max(self.offset_ratio * reference.duration());
        reference.class == pred.class
            && (reference.onset - pred.onset).abs() <= self.onset + TIME_EPS
            && (reference.offset - pred.offset).abs() <= offset_tol + TIME_EPS
    }
}

/// One-to-one pairing strategy between reference and predicted events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    /// Maximum-cardinality bipartite matching.
    #[default]
    Optimal,
    /// References in onset order each take the earliest unmatched hit.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Percent.
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventScores {
    /// Macro-averaged F1 in percent.
    pub macro_f1: f64,
    pub per_class: Vec<ClassScore>,
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tp: usize,
    refs: usize,
    preds: usize,
}

/// Pairs clips by id; both sides must hold the same ids exactly once.
fn align<'a>(refs: &'a [(String, EventList)], preds: &'a [(String, EventList)]) -> Result<Vec<(&'a str, &'a EventList, &'a EventList)>> {
    check_unique(refs)?;
    check_unique(preds)?;
    let by_id: HashMap<&str, &EventList> = preds.iter().map(|(id, e)| (id.as_str(), e)).collect();
    let ref_ids: BTreeSet<&str> = refs.iter().map(|(id, _)| id.as_str()).collect();
    let missing_preds: Vec<String> = refs.iter().filter(|(id, _)| !by_id.contains_key(id.as_str())).map(|(id, _)| id.clone()).collect();
    let extra_preds: Vec<String> = preds.iter().filter(|(id, _)| !ref_ids.contains(id.as_str())).map(|(id, _)| id.clone()).collect();
    if !missing_preds.is_empty() || !extra_preds.is_empty() {
        return Err(MetricsError::ClipMismatch { missing_preds, extra_preds });
    }
    let mut pairs: Vec<_> = refs.iter().map(|(id, r)| (id.as_str(), r, by_id[id.as_str()])).collect();
    pairs.sort_by(|a, b| a.0.cmp(b.0));
    Ok(pairs)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        100.0
    } else {
        100.0 * (2 * tp) as f64 / denom as f64
    }
}

fn summarize(totals: BTreeMap<String, Counts>) -> Result<EventScores> {
    if totals.is_empty() {
        return Err(MetricsError::NoClasses);
    }
    let per_class: Vec<ClassScore> = totals
        .into_iter()
        .map(|(class, c)| {
            let (fp, fn_) = (c.preds - c.tp, c.refs - c.tp);
            ClassScore { class, tp: c.tp, fp, fn_, f1: f1(c.tp, fp, fn_) }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    Ok(EventScores { macro_f1, per_class })
}

fn merge_counts(per_clip: Vec<BTreeMap<String, Counts>>) -> BTreeMap<String, Counts> {
    let mut totals: BTreeMap<String, Counts> = BTreeMap::new();
    for clip in per_clip {
        for (class, c) in clip {
            let t = totals.entry(class).or_default();
            t.tp += c.tp;
            t.refs += c.refs;
            t.preds += c.preds;
        }
    }
    totals
}

fn by_class(events: &[Event]) -> BTreeMap<&str, Vec<&Event>> {
    let mut out: BTreeMap<&str, Vec<&Event>> = BTreeMap::new();
    for e in events {
        out.entry(e.class.as_str()).or_default().push(e);
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.offset.total_cmp(&b.offset)));
    }
    out
}

fn greedy_matches(refs: &[&Event], preds: &[&Event], collars: &Collars) -> usize {
    let mut used = vec![false; preds.len()];
    let mut tp = 0;
    for r in refs {
        if let Some(j) = (0..preds.len()).find(|&j| !used[j] && collars.matches(r, preds[j])) {
            used[j] = true;
            tp += 1;
        }
    }
    tp
}

fn optimal_matches(refs: &[&Event], preds: &[&Event], collars: &Collars) -> usize {
    let adj: Vec<Vec<usize>> =
        refs.iter().map(|r| (0..preds.len()).filter(|&j| collars.matches(r, preds[j])).collect()).collect();
    let mut owner: Vec<Option<usize>> = vec![None; preds.len()];

    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                if owner[j].is_none_or(|k| augment(k, adj, seen, owner)) {
                    owner[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }

    (0..refs.len())
        .filter(|&i| {
            let mut seen = vec![false; preds.len()];
            augment(i, &adj, &mut seen, &mut owner)
        })
        .count()
}

/// Event-based macro F1 (percent) over classes seen in either side.
pub fn event_based_scores(
    refs: &[(String, EventList)],
    preds: &[(String, EventList)],
    collars: &Collars,
    matching: Matching,
) -> Result<EventScores> {
    collars.validate()?;
    let pairs = align(refs, preds)?;
    let per_clip: Vec<BTreeMap<String, Counts>> = pairs
        .par_iter()
        .map(|(_, r, p)| {
            let (r, p) = (by_class(r), by_class(p));
            let classes: BTreeSet<&str> = r.keys().chain(p.keys()).copied().collect();
            classes
                .into_iter()
                .map(|class| {
                    let empty = Vec::new();
                    let rc = r.get(class).unwrap_or(&empty);
                    let pc = p.get(class).unwrap_or(&empty);
                    let tp = match matching {
                        Matching::Optimal => optimal_matches(rc, pc, collars),
                        Matching::Greedy => greedy_matches(rc, pc, collars),
                    };
                    (class.to_string(), Counts { tp, refs: rc.len(), preds: pc.len() })
                })
                .collect()
        })
        .collect();
    summarize(merge_counts(per_clip))
}

/// Clip-level macro F1 (percent) over class presence per clip.
pub fn clip_macro_f1(refs: &[(String, EventList)], preds: &[(String, EventList)]) -> Result<EventScores> {
    let pairs = align(refs, preds)?;
    let per_clip: Vec<BTreeMap<String, Counts>> = pairs
        .iter()
        .map(|(_, r, p)| {
            let r: BTreeSet<&str> = r.iter().map(|e| e.class.as_str()).collect();
            let p: BTreeSet<&str> = p.iter().map(|e| e.class.as_str()).collect();
            r.union(&p)
                .map(|&class| {
                    let (in_r, in_p) = (r.contains(class), p.contains(class));
                    let c = Counts { tp: (in_r && in_p) as usize, refs: in_r as usize, preds: in_p as usize };
                    (class.to_string(), c)
                })
                .collect()
        })
        .collect();
    summarize(merge_counts(per_clip))
}
