//! Control conditions in the frame-level `L x H` form consumed by the
//! control condition encoder.
//!
//! The timestamp condition goes through three steps: events become a
//! binary `D x L` grid, class names become projected label embeddings
//! (`D x H`), and the class object is the per-frame sum of the embeddings
//! of the active classes. Pitch and energy arrive as quantized contours
//! and are lifted to `L x H` with a per-bin embedding table.

mod embedding;

pub use embedding::{EmbeddingProvider, FileEmbeddings, HashEmbeddings};

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::QuantizedContour;
use crate::events::Event;

pub type Result<T> = std::result::Result<T, ConditionError>;

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error("unknown event class {0:?}")]
    UnknownClass(String),
    #[error("duplicate event class {0:?}")]
    DuplicateClass(String),
    #[error("event set must contain at least one class")]
    EmptyEventSet,
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("no embedding for class {0:?}")]
    MissingEmbedding(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("condition has {got} frames, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("embedding file line {line}: {message}")]
    EmbeddingFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered list of distinct sound-event classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct EventSet {
    classes: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl EventSet {
    pub fn new(classes: Vec<String>) -> Result<Self> {
        if classes.is_empty() {
            return Err(ConditionError::EmptyEventSet);
        }
        let mut index = HashMap::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            if index.insert(c.clone(), i).is_some() {
                return Err(ConditionError::DuplicateClass(c.clone()));
            }
        }
        Ok(Self { classes, index })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.index.get(class).copied()
    }
}

impl TryFrom<Vec<String>> for EventSet {
    type Error = ConditionError;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EventSet> for Vec<String> {
    fn from(s: EventSet) -> Self {
        s.classes
    }
}

/// Binary `D x L` event-presence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestampGrid {
    pub grid: Array2<u8>,
    pub frame_rate: f64,
}

impl TimestampGrid {
    pub fn n_classes(&self) -> usize {
        self.grid.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.grid.ncols()
    }

    pub fn as_f64(&self) -> Array2<f64> {
        self.grid.mapv(f64::from)
    }
}

/// `D x H` projected class embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbedding {
    pub matrix: Array2<f64>,
}

/// `L x H` frame-level semantic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassObject {
    pub matrix: Array2<f64>,
}

/// Frame `l` (centered at `l / frame_rate`) is active for class `d` when
/// the center falls inside `[onset, offset)` of any event of that class.
pub fn events_to_grid(events: &[Event], set: &EventSet, frame_rate: f64, n_frames: usize) -> Result<TimestampGrid> {
    let horizon = n_frames as f64 / frame_rate;
    let mut grid = Array2::<u8>::zeros((set.len(), n_frames));
    for e in events {
        let d = set.index_of(&e.class).ok_or_else(|| ConditionError::UnknownClass(e.class.clone()))?;
        if let Some(reason) = e.invalid_reason() {
            return Err(ConditionError::InvalidEvent(reason));
        }
        if e.offset > horizon + 1e-9 {
            return Err(ConditionError::InvalidEvent(format!(
                "offset {} beyond clip end {horizon} for {:?}",
                e.offset, e.class
            )));
        }
        for l in 0..n_frames {
            let center = l as f64 / frame_rate;
            if center >= e.onset && center < e.offset {
                grid[[d, l]] = 1;
            }
        }
    }
    Ok(TimestampGrid { grid, frame_rate })
}

/// Maximal runs of active frames become events `[start / fr, end / fr)`.
pub fn grid_to_events(grid: &TimestampGrid, set: &EventSet) -> Result<Vec<Event>> {
    if grid.n_classes() != set.len() {
        return Err(ConditionError::Shape(format!(
            "grid has {} rows, event set has {} classes",
            grid.n_classes(),
            set.len()
        )));
    }
    let fr = grid.frame_rate;
    let mut out = Vec::new();
    for (d, row) in grid.grid.rows().into_iter().enumerate() {
        let mut start = None;
        for (l, &v) in row.iter().chain(std::iter::once(&0)).enumerate() {
            match (v != 0, start) {
                (true, None) => start = Some(l),
                (false, Some(s)) => {
                    out.push(Event::new(set.classes()[d].clone(), s as f64 / fr, l as f64 / fr));
                    start = None;
                }
                _ => {}
            }
        }
    }
    out.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class.cmp(&b.class)));
    Ok(out)
}

/// Row `d` is `provider(class_d) . projection`, so classes never mix.
pub fn embed_labels(set: &EventSet, provider: &dyn EmbeddingProvider, projection: &Array2<f64>) -> Result<LabelEmbedding> {
    let raw = class_embeddings(set, provider)?;
    if raw.ncols() != projection.nrows() {
        return Err(ConditionError::Shape(format!(
            "provider dimension {} but projection has {} rows",
            raw.ncols(),
            projection.nrows()
        )));
    }
    if projection.iter().any(|v| !v.is_finite()) {
        return Err(ConditionError::Shape("projection must be finite".into()));
    }
    Ok(LabelEmbedding { matrix: raw.dot(projection) })
}

/// Stacks the provider vectors of each class as a `D x E` matrix.
pub fn class_embeddings(set: &EventSet, provider: &dyn EmbeddingProvider) -> Result<Array2<f64>> {
    let e = provider.dim();
    let mut raw = Array2::zeros((set.len(), e));
    for (d, class) in set.classes().iter().enumerate() {
        let v = provider.embed(class).ok_or_else(|| ConditionError::MissingEmbedding(class.clone()))?;
        if v.len() != e {
            return Err(ConditionError::Shape(format!("embedding for {class:?} has length {}", v.len())));
        }
        raw.row_mut(d).assign(&ndarray::ArrayView1::from(&v));
    }
    Ok(raw)
}

/// `object[l, h] = sum_d label[d, h] * grid[d, l]`.
pub fn class_object(label: &LabelEmbedding, grid: &TimestampGrid) -> Result<ClassObject> {
    if label.matrix.nrows() != grid.n_classes() {
        return Err(ConditionError::Shape(format!(
            "label embedding has {} classes, grid has {}",
            label.matrix.nrows(),
            grid.n_classes()
        )));
    }
    Ok(ClassObject { matrix: grid.as_f64().t().dot(&label.matrix) })
}

/// A control condition before it is brought to `L x H`.
#[derive(Debug, Clone, Copy)]
pub enum Condition<'a> {
    Object(&'a ClassObject),
    Contour(&'a QuantizedContour),
}

/// Brings a condition to `L x H`: class objects pass through, contours look
/// up one row of `bin_table` (`n_bins x H`) per frame.
pub fn standardize(condition: Condition<'_>, bin_table: &Array2<f64>, expected_len: usize) -> Result<Array2<f64>> {
    match condition {
        Condition::Object(obj) => {
            if obj.matrix.nrows() != expected_len {
                return Err(ConditionError::Length { expected: expected_len, got: obj.matrix.nrows() });
            }
            Ok(obj.matrix.clone())
        }
        Condition::Contour(q) => {
            if q.len() != expected_len {
                return Err(ConditionError::Length { expected: expected_len, got: q.len() });
            }
            let mut out = Array2::zeros((q.len(), bin_table.ncols()));
            for (l, &b) in q.indices.iter().enumerate() {
                let b = b as usize;
                if b >= bin_table.nrows() {
                    return Err(ConditionError::Shape(format!(
                        "bin {b} outside embedding table of {} rows",
                        bin_table.nrows()
                    )));
                }
                out.row_mut(l).assign(&bin_table.row(b));
            }
            Ok(out)
        }
    }
}
