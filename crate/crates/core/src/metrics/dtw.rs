use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::dsp::Contour;

/// Value scale on which pitch contours are aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PitchScale {
    #[default]
    Hz,
    LogHz,
}

/// Dynamic time warping with absolute-difference cost and unit
/// match/insert/delete steps. The path of least total cost wins, ties going
/// to the shorter path, and the result is that cost divided by the number
/// of aligned pairs on the path.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty("dtw needs two nonempty sequences".into()));
    }
    let m = b.len();
    let better = |x: (f64, usize), y: (f64, usize)| if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x };
    let mut prev: Vec<(f64, usize)> = Vec::with_capacity(m);
    let mut cur: Vec<(f64, usize)> = vec![(0.0, 0); m];
    for (i, &ai) in a.iter().enumerate() {
        for j in 0..m {
            let local = (ai - b[j]).abs();
            let best = match (i, j) {
                (0, 0) => (0.0, 0),
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => better(better(prev[j - 1], prev[j]), cur[j - 1]),
            };
            cur[j] = (best.0 + local, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
        cur.resize(m, (0.0, 0));
    }
    let (cost, len) = prev[m - 1];
    Ok(cost / len as f64)
}

/// DTW between the voiced frames of two pitch contours.
pub fn pitch_dtw(generated: &Contour, reference: &Contour, scale: PitchScale) -> Result<f64> {
    let values = |c: &Contour| -> Vec<f64> {
        c.voiced_values()
            .map(|v| match scale {
                PitchScale::Hz => f64::from(v),
                PitchScale::LogHz => f64::from(v).max(f64::MIN_POSITIVE).ln(),
            })
            .collect()
    };
    dtw(&values(generated), &values(reference))
}
