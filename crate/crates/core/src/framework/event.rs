use std::fmt;
use std::str::FromStr;

/// Size of a Tor cell in bytes.
pub const CELL_SIZE: u32 = 512;

/// The events a machine can react to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    NonPaddingSent,
    NonPaddingRecv,
    PaddingSent,
    PaddingRecv,
    LimitReached,
    BlockingBegin,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::NonPaddingSent,
        EventKind::NonPaddingRecv,
        EventKind::PaddingSent,
        EventKind::PaddingRecv,
        EventKind::LimitReached,
        EventKind::BlockingBegin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::NonPaddingSent => "NonPaddingSent",
            EventKind::NonPaddingRecv => "NonPaddingRecv",
            EventKind::PaddingSent => "PaddingSent",
            EventKind::PaddingRecv => "PaddingRecv",
            EventKind::LimitReached => "LimitReached",
            EventKind::BlockingBegin => "BlockingBegin",
        }
    }

    pub fn carries_cell(self) -> bool {
        !matches!(self, EventKind::LimitReached | EventKind::BlockingBegin)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown event {s:?}"))
    }
}

/// An event fed into a machine runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameworkEvent {
    pub kind: EventKind,
    /// Microseconds since connection start.
    pub timestamp: u64,
    pub byte_count: u32,
}

impl FrameworkEvent {
    pub fn new(kind: EventKind, timestamp: u64) -> Self {
        let byte_count = if kind.carries_cell() { CELL_SIZE } else { 0 };
        Self {
            kind,
            timestamp,
            byte_count,
        }
    }
}
