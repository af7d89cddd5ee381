//! Cell traces from the client's perspective and their text formats.
//!
//! Undefended traces have one `<seconds>\t<+1|-1>` line per cell. Defended
//! traces add a third column, `p` for padding or `n` for real traffic.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::framework::CELL_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Outgoing,
    Incoming,
}

impl Direction {
    pub fn sign(self) -> i8 {
        match self {
            Direction::Outgoing => 1,
            Direction::Incoming => -1,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::Outgoing => Direction::Incoming,
            Direction::Incoming => Direction::Outgoing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    /// Seconds relative to the first cell.
    pub time: f64,
    pub direction: Direction,
    pub is_padding: bool,
    pub size: u32,
}

impl TraceEvent {
    pub fn new(time: f64, direction: Direction, is_padding: bool) -> Self {
        Self {
            time,
            direction,
            is_padding,
            size: CELL_SIZE,
        }
    }

    pub fn real(time: f64, direction: Direction) -> Self {
        Self::new(time, direction, false)
    }

    pub fn padding(time: f64, direction: Direction) -> Self {
        Self::new(time, direction, true)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace is empty")]
    Empty,
    #[error("trace has no non-padding cells")]
    NoRealCells,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub id: String,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    /// Builds a trace, stable-sorting events by time.
    pub fn new(id: impl Into<String>, mut events: Vec<TraceEvent>) -> Self {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Self {
            id: id.into(),
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Shifts times so the first event is at 0.
    pub fn normalized(mut self) -> Self {
        if let Some(t0) = self.events.first().map(|e| e.time) {
            if t0 != 0.0 {
                for e in &mut self.events {
                    e.time -= t0;
                }
            }
        }
        self
    }

    pub fn duration(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.time)
    }

    pub fn count(&self, direction: Direction, padding: bool) -> usize {
        self.events
            .iter()
            .filter(|e| e.direction == direction && e.is_padding == padding)
            .count()
    }

    pub fn real_events(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(|e| !e.is_padding)
    }

    pub fn last_real_time(&self) -> Option<f64> {
        self.events
            .iter()
            .rev()
            .find(|e| !e.is_padding)
            .map(|e| e.time)
    }

    pub fn has_padding(&self) -> bool {
        self.events.iter().any(|e| e.is_padding)
    }

    /// Parses either format. Times are normalized so the first cell is at 0.
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            events.push(parse_line(line).map_err(|message| TraceError::Parse {
                line: i + 1,
                message,
            })?);
        }
        if events.is_empty() {
            return Err(TraceError::Empty);
        }
        Ok(Trace::new(id, events).normalized())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TraceError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(id, &text)
    }

    /// Two-column undefended format.
    pub fn to_undefended_string(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 16);
        for e in &self.events {
            writeln!(out, "{}\t{}", e.time, e.direction.sign()).unwrap();
        }
        out
    }

    /// Three-column defended format.
    pub fn to_defended_string(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 18);
        for e in &self.events {
            let tag = if e.is_padding { 'p' } else { 'n' };
            writeln!(out, "{}\t{}\t{tag}", e.time, e.direction.sign()).unwrap();
        }
        out
    }

    pub fn save_defended(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        write_file(path.as_ref(), &self.to_defended_string())
    }

    pub fn save_undefended(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        write_file(path.as_ref(), &self.to_undefended_string())
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), TraceError> {
    fs::write(path, text).map_err(|e| TraceError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn parse_line(line: &str) -> Result<TraceEvent, String> {
    let mut cols = line.split('\t');
    let time_s = cols.next().unwrap_or_default().trim();
    let time: f64 = time_s
        .parse()
        .map_err(|_| format!("bad timestamp {time_s:?}"))?;
    if !time.is_finite() || time < 0.0 {
        return Err(format!("timestamp must be finite and >= 0, got {time_s:?}"));
    }
    let dir_s = cols.next().ok_or("missing direction")?.trim();
    let direction = match dir_s {
        "1" | "+1" => Direction::Outgoing,
        "-1" => Direction::Incoming,
        other => return Err(format!("bad direction {other:?}")),
    };
    let is_padding = match cols.next().map(str::trim) {
        None => false,
        Some("p") => true,
        Some("n") => false,
        Some(other) => return Err(format!("bad padding flag {other:?}")),
    };
    if cols.next().is_some() {
        return Err("too many columns".into());
    }
    Ok(TraceEvent::new(time, direction, is_padding))
}

/// Drops every event after the last non-padding cell, in both directions.
pub fn strip_trailing_padding(trace: &Trace) -> Result<Trace, TraceError> {
    let last = trace
        .events
        .iter()
        .rposition(|e| !e.is_padding)
        .ok_or(TraceError::NoRealCells)?;
    Ok(Trace {
        id: trace.id.clone(),
        events: trace.events[..=last].to_vec(),
    })
}

/// Seconds to integer nanoseconds.
pub fn to_nanos(seconds: f64) -> i64 {
    (seconds * 1e9).round() as i64
}

pub fn from_nanos(nanos: i64) -> f64 {
    nanos as f64 / 1e9
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(t: &Trace) -> Vec<(f64, bool)> {
        t.events.iter().map(|e| (e.time, e.is_padding)).collect()
    }

    #[test]
    fn minimal_file() {
        let t = Trace::parse("x", "0.0\t1\n0.2\t-1\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.events[0].direction, Direction::Outgoing);
        assert_eq!(t.events[1].direction, Direction::Incoming);
        assert_eq!(t.events[1].time, 0.2);
        assert!(!t.has_padding());
    }

    #[test]
    fn header_is_rejected_at_line_one() {
        let e = Trace::parse("x", "time\tdirection\n0.0\t1\n").unwrap_err();
        assert!(matches!(e, TraceError::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_is_rejected() {
        assert_eq!(Trace::parse("x", "").unwrap_err(), TraceError::Empty);
        assert_eq!(Trace::parse("x", "\n\n").unwrap_err(), TraceError::Empty);
    }

    #[test]
    fn normalizes_origin_and_sorts_stably() {
        let t = Trace::parse("x", "5.5\t1\n5.0\t-1\n5.5\t-1\n").unwrap();
        let got: Vec<_> = t.events.iter().map(|e| (e.time, e.direction)).collect();
        assert_eq!(
            got,
            vec![
                (0.0, Direction::Incoming),
                (0.5, Direction::Outgoing),
                (0.5, Direction::Incoming)
            ]
        );
    }

    #[test]
    fn defended_format_round_trips() {
        let t = Trace::new(
            "x",
            vec![
                TraceEvent::real(0.0, Direction::Outgoing),
                TraceEvent::padding(0.0123456789, Direction::Incoming),
            ],
        );
        let back = Trace::parse("x", &t.to_defended_string()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn strip_examples() {
        let t = Trace::new(
            "x",
            vec![
                TraceEvent::real(0.0, Direction::Outgoing),
                TraceEvent::padding(1.0, Direction::Outgoing),
                TraceEvent::padding(2.0, Direction::Incoming),
            ],
        );
        assert_eq!(
            flags(&strip_trailing_padding(&t).unwrap()),
            vec![(0.0, false)]
        );

        let t = Trace::new(
            "x",
            vec![
                TraceEvent::real(0.0, Direction::Outgoing),
                TraceEvent::padding(1.0, Direction::Incoming),
                TraceEvent::real(2.0, Direction::Incoming),
                TraceEvent::padding(3.0, Direction::Outgoing),
            ],
        );
        assert_eq!(
            flags(&strip_trailing_padding(&t).unwrap()),
            vec![(0.0, false), (1.0, true), (2.0, false)]
        );

        let t = Trace::new("x", vec![TraceEvent::padding(0.0, Direction::Outgoing)]);
        assert_eq!(
            strip_trailing_padding(&t).unwrap_err(),
            TraceError::NoRealCells
        );
    }

    #[test]
    fn nanosecond_conversion_is_exact_for_short_decimals() {
        for s in ["0.2", "0.000001", "1.123456789", "13.37"] {
            let t: f64 = s.parse().unwrap();
            assert_eq!(from_nanos(to_nanos(t)), t);
        }
    }
}
