//! Sound events with onset and offset times in seconds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub class: String,
    pub onset: f64,
    pub offset: f64,
}

impl Event {
    pub fn new(class: impl Into<String>, onset: f64, offset: f64) -> Self {
        Self { class: class.into(), onset, offset }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    /// `Some(reason)` when the event violates `0 <= onset < offset`.
    pub fn invalid_reason(&self) -> Option<String> {
        if !(self.onset.is_finite() && self.offset.is_finite()) {
            Some(format!("non-finite time for {:?}", self.class))
        } else if self.onset < 0.0 {
            Some(format!("negative onset {} for {:?}", self.onset, self.class))
        } else if self.onset >= self.offset {
            Some(format!("onset {} >= offset {} for {:?}", self.onset, self.offset, self.class))
        } else {
            None
        }
    }
}

pub type EventList = Vec<Event>;

/// Events of one clip, keyed by clip id.
pub type ClipEvents = BTreeMap<String, EventList>;

/// A rejected line of an event table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

const HEADERS: [[&str; 4]; 2] = [
    ["segment_id", "start_time_seconds", "end_time_seconds", "label"],
    ["filename", "onset", "offset", "event_label"],
];

/// Parses `id<TAB>onset<TAB>offset<TAB>class` rows, with an optional
/// header line. A row holding only an id declares a clip without events.
/// Malformed rows are returned alongside the parsed clips.
pub fn parse_event_table(text: &str) -> (ClipEvents, Vec<RowError>) {
    let mut clips = ClipEvents::new();
    let mut errors = Vec::new();
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if std::mem::take(&mut first) && HEADERS.iter().any(|h| fields[..] == h[..]) {
            continue;
        }
        let mut fail = |message: String| errors.push(RowError { line: i + 1, message });
        match fields[..] {
            [id] if !id.is_empty() => {
                clips.entry(id.to_string()).or_default();
            }
            [id, onset, offset, class] if !id.is_empty() && !class.is_empty() => {
                let (Ok(onset), Ok(offset)) = (onset.parse::<f64>(), offset.parse::<f64>()) else {
                    fail(format!("unparsable times {onset:?}, {offset:?}"));
                    continue;
                };
                let event = Event::new(class, onset, offset);
                match event.invalid_reason() {
                    Some(reason) => fail(reason),
                    None => clips.entry(id.to_string()).or_default().push(event),
                }
            }
            _ => fail(format!("expected 4 tab-separated fields, found {}", fields.len())),
        }
    }
    for events in clips.values_mut() {
        events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class.cmp(&b.class)));
    }
    (clips, errors)
}

/// Renders clips in the format read by [`parse_event_table`].
pub fn format_event_table(clips: &ClipEvents) -> String {
    let mut out = String::new();
    for (id, events) in clips {
        if events.is_empty() {
            out.push_str(&format!("{id}\n"));
        }
        for e in events {
            out.push_str(&format!("{id}\t{}\t{}\t{}\n", e.onset, e.offset, e.class));
        }
    }
    out
}

/// Merges overlapping or touching events of the same class; output sorted by (class, onset).
pub fn merge_events(events: &[Event]) -> EventList {
    let mut sorted = events.to_vec();
    sorted.sort_by(|a, b| a.class.cmp(&b.class).then(a.onset.total_cmp(&b.onset)));
    let mut out: EventList = Vec::with_capacity(sorted.len());
    for e in sorted {
        match out.last_mut() {
            Some(last) if last.class == e.class && e.onset <= last.offset => {
                last.offset = last.offset.max(e.offset);
            }
            _ => out.push(e),
        }
    }
    out
}
