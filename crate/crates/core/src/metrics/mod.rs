//! Controllability metrics for generated audio.
//!
//! Temporal control is scored with the event-based macro F1 (onset and
//! offset collars) and the clip-level macro F1 over class presence. Pitch
//! control is scored with the moments of the voiced F0 distribution and a
//! length-normalized dynamic time warping distance against the reference
//! contour. Energy control is the mean absolute error between quantized
//! contours on a `[0, 1]` scale. [`build_report`] aggregates a corpus into
//! one table row.

mod dtw;
mod energy;
mod moments;
mod report;
mod temporal;

pub use dtw::{dtw, pitch_dtw, PitchScale};
pub use energy::{energy_mae, mae};
pub use moments::{moments, pitch_moments, Moments};
pub use report::{build_report, reference_row, render_table, ClipPair, Corpus, EvalOptions, EvalReport};
pub use temporal::{clip_macro_f1, event_based_scores, ClassScore, Collars, EventScores, Matching};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("duplicate clip id {0:?}")]
    DuplicateClip(String),
    #[error("clip sets differ: missing predictions for {missing_preds:?}, unknown predicted clips {extra_preds:?}")]
    ClipMismatch { missing_preds: Vec<String>, extra_preds: Vec<String> },
    #[error("no event classes in references or predictions")]
    NoClasses,
    #[error("insufficient voiced frames: {voiced}, need at least 2")]
    InsufficientVoiced { voiced: usize },
    #[error("degenerate distribution: zero variance")]
    ZeroVariance,
    #[error("empty input: {0}")]
    Empty(String),
    #[error("length mismatch: {left} vs {right} frames")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Rejects repeated clip ids and returns the ids in input order.
pub(crate) fn check_unique<T>(items: &[(String, T)]) -> Result<Vec<&str>> {
    let mut seen = std::collections::HashSet::with_capacity(items.len());
    for (id, _) in items {
        if !seen.insert(id.as_str()) {
            return Err(MetricsError::DuplicateClip(id.clone()));
        }
    }
    Ok(items.iter().map(|(id, _)| id.as_str()).collect())
}
