//! Machine and state definitions plus the line-oriented `MBN1` text encoding.
//!
//! ```text
//! MBN1
//! states <count> start <index>
//! state <i> action=<pad|block|noop> adist=<dist|none> tdist=<dist|none> ldist=<dist|none> bypass=<0|1> replace=<0|1>
//! on <event> <from> -> <to|END> p=<prob>
//! ```
//!
//! Distributions are written `family:params:clamp_min,clamp_max` (see
//! [`DistributionSpec`]). Probabilities carry 12 significant digits; machines
//! store them already rounded to that precision so decoding is exact.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use super::dist::{DistributionSpec, ParamError};
use super::event::EventKind;

pub const MBN_MAGIC: &str = "MBN1";

/// Slack allowed on the per-event probability sum.
pub const PROB_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    SendPadding,
    BlockOutgoing,
    NoOp,
}

impl ActionKind {
    fn tag(self) -> &'static str {
        match self {
            ActionKind::SendPadding => "pad",
            ActionKind::BlockOutgoing => "block",
            ActionKind::NoOp => "noop",
        }
    }
}

/// Transition target: a state index or the terminal `StateEnd`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    State(usize),
    End,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::State(i) => write!(f, "{i}"),
            Target::End => f.write_str("END"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub target: Target,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpec {
    pub action: ActionKind,
    /// Padding bytes or blocking microseconds.
    pub action_dist: Option<DistributionSpec>,
    /// Microseconds before the action applies. `None` means immediately.
    pub timeout_dist: Option<DistributionSpec>,
    /// Self-transitions allowed before `LimitReached`. `None` means unlimited.
    pub limit_dist: Option<DistributionSpec>,
    pub bypass: bool,
    pub replace: bool,
    pub transitions: BTreeMap<EventKind, Vec<Transition>>,
}

impl StateSpec {
    pub fn new(action: ActionKind) -> Self {
        Self {
            action,
            action_dist: None,
            timeout_dist: None,
            limit_dist: None,
            bypass: false,
            replace: false,
            transitions: BTreeMap::new(),
        }
    }

    pub fn noop() -> Self {
        Self::new(ActionKind::NoOp)
    }

    pub fn padding(amount: DistributionSpec, timeout: DistributionSpec) -> Self {
        Self {
            action_dist: Some(amount),
            timeout_dist: Some(timeout),
            ..Self::new(ActionKind::SendPadding)
        }
    }

    pub fn blocking(duration: DistributionSpec, timeout: DistributionSpec) -> Self {
        Self {
            action_dist: Some(duration),
            timeout_dist: Some(timeout),
            ..Self::new(ActionKind::BlockOutgoing)
        }
    }

    pub fn with_limit(mut self, limit: DistributionSpec) -> Self {
        self.limit_dist = Some(limit);
        self
    }

    pub fn with_flags(mut self, bypass: bool, replace: bool) -> Self {
        self.bypass = bypass;
        self.replace = replace;
        self
    }

    /// Adds a transition edge for `event`.
    pub fn on(mut self, event: EventKind, target: Target, probability: f64) -> Self {
        self.transitions.entry(event).or_default().push(Transition {
            target,
            probability,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MachineError {
    #[error("machine has no states")]
    Empty,
    #[error("start state {0} out of range")]
    BadStart(usize),
    #[error("state {state}: transition on {event} targets missing state {target}")]
    DanglingTarget {
        state: usize,
        event: EventKind,
        target: usize,
    },
    #[error("state {state}: probability {p} on {event} outside [0, 1]")]
    BadProbability {
        state: usize,
        event: EventKind,
        p: f64,
    },
    #[error("state {state}: probabilities on {event} sum to {sum} > 1")]
    ProbabilitySum {
        state: usize,
        event: EventKind,
        sum: f64,
    },
    #[error("state {state}: duplicate transition on {event} to {target}")]
    DuplicateTarget {
        state: usize,
        event: EventKind,
        target: Target,
    },
    #[error("state {state}: {which} distribution: {source}")]
    Distribution {
        state: usize,
        which: &'static str,
        source: ParamError,
    },
    #[error("state {state}: {action:?} state requires an action distribution")]
    MissingActionDist { state: usize, action: ActionKind },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

/// An immutable, validated padding machine.
#[derive(Debug, Clone, PartialEq)]
pub struct Machine {
    states: Vec<StateSpec>,
    start: usize,
}

/// Rounds to 12 significant digits, the precision used on the wire.
pub fn canonical_probability(p: f64) -> f64 {
    format!("{p:.11e}").parse().unwrap_or(p)
}

impl Machine {
    pub fn new(mut states: Vec<StateSpec>, start: usize) -> Result<Self, MachineError> {
        if states.is_empty() {
            return Err(MachineError::Empty);
        }
        if start >= states.len() {
            return Err(MachineError::BadStart(start));
        }
        let n = states.len();
        for (i, state) in states.iter_mut().enumerate() {
            for (which, dist) in [
                ("action", &state.action_dist),
                ("timeout", &state.timeout_dist),
                ("limit", &state.limit_dist),
            ] {
                if let Some(d) = dist {
                    d.validate().map_err(|source| MachineError::Distribution {
                        state: i,
                        which,
                        source,
                    })?;
                }
            }
            if state.action != ActionKind::NoOp && state.action_dist.is_none() {
                return Err(MachineError::MissingActionDist {
                    state: i,
                    action: state.action,
                });
            }
            for (&event, edges) in state.transitions.iter_mut() {
                edges.sort_by_key(|t| t.target);
                for pair in edges.windows(2) {
                    if pair[0].target == pair[1].target {
                        return Err(MachineError::DuplicateTarget {
                            state: i,
                            event,
                            target: pair[0].target,
                        });
                    }
                }
                for t in edges.iter_mut() {
                    if let Target::State(s) = t.target {
                        if s >= n {
                            return Err(MachineError::DanglingTarget {
                                state: i,
                                event,
                                target: s,
                            });
                        }
                    }
                    if !(0.0..=1.0).contains(&t.probability) {
                        return Err(MachineError::BadProbability {
                            state: i,
                            event,
                            p: t.probability,
                        });
                    }
                    t.probability = canonical_probability(t.probability);
                }
                normalize_excess(edges);
                let sum: f64 = edges.iter().map(|t| t.probability).sum();
                if sum > 1.0 + PROB_SUM_TOLERANCE {
                    return Err(MachineError::ProbabilitySum {
                        state: i,
                        event,
                        sum,
                    });
                }
            }
            state.transitions.retain(|_, edges| !edges.is_empty());
        }
        Ok(Self { states, start })
    }

    pub fn states(&self) -> &[StateSpec] {
        &self.states
    }

    pub fn state(&self, index: usize) -> &StateSpec {
        &self.states[index]
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// True if any state can enact blocking.
    pub fn blocks(&self) -> bool {
        self.states
            .iter()
            .any(|s| s.action == ActionKind::BlockOutgoing)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MBN_MAGIC}").unwrap();
        writeln!(out, "states {} start {}", self.states.len(), self.start).unwrap();
        let dist = |d: &Option<DistributionSpec>| {
            d.as_ref()
                .map_or_else(|| "none".to_string(), |d| d.to_string())
        };
        for (i, s) in self.states.iter().enumerate() {
            writeln!(
                out,
                "state {i} action={} adist={} tdist={} ldist={} bypass={} replace={}",
                s.action.tag(),
                dist(&s.action_dist),
                dist(&s.timeout_dist),
                dist(&s.limit_dist),
                u8::from(s.bypass),
                u8::from(s.replace),
            )
            .unwrap();
        }
        for (i, s) in self.states.iter().enumerate() {
            for (event, edges) in &s.transitions {
                for t in edges {
                    writeln!(
                        out,
                        "on {event} {i} -> {} p={:.11e}",
                        t.target, t.probability
                    )
                    .unwrap();
                }
            }
        }
        out
    }

    pub fn deserialize(text: &str) -> Result<Self, ParseError> {
        let err = |line: usize, message: String| ParseError { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));

        match lines.next() {
            Some((_, MBN_MAGIC)) => {}
            Some((n, l)) if l.starts_with("MBN") => {
                return Err(err(n, format!("unsupported version {l:?}")));
            }
            Some((n, l)) => return Err(err(n, format!("bad magic {l:?}"))),
            None => return Err(err(1, "empty input".into())),
        }

        let (n, header) = lines
            .next()
            .ok_or_else(|| err(2, "missing header".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let (count, start) = match h.as_slice() {
            ["states", c, "start", s] => (
                c.parse::<usize>()
                    .map_err(|_| err(n, format!("bad state count {c:?}")))?,
                s.parse::<usize>()
                    .map_err(|_| err(n, format!("bad start index {s:?}")))?,
            ),
            _ => return Err(err(n, format!("bad header {header:?}"))),
        };

        let mut states: Vec<StateSpec> = Vec::with_capacity(count);
        let mut last_line = n;
        for (n, line) in lines {
            last_line = n;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("state ") {
                let state = parse_state_line(rest, states.len()).map_err(|m| err(n, m))?;
                states.push(state);
            } else if let Some(rest) = line.strip_prefix("on ") {
                let (from, event, t) = parse_transition_line(rest).map_err(|m| err(n, m))?;
                if let Target::State(s) = t.target {
                    if s >= count {
                        return Err(err(n, format!("dangling state index {s}")));
                    }
                }
                let state = states
                    .get_mut(from)
                    .ok_or_else(|| err(n, format!("transition from unknown state {from}")))?;
                state.transitions.entry(event).or_default().push(t);
            } else {
                return Err(err(n, format!("unrecognized line {line:?}")));
            }
        }
        if states.len() != count {
            return Err(err(
                last_line,
                format!("header declares {count} states, found {}", states.len()),
            ));
        }
        Machine::new(states, start).map_err(|e| err(last_line, e.to_string()))
    }
}

// Pulls the largest edge down when 12-digit rounding pushed the sum past 1.
fn normalize_excess(edges: &mut [Transition]) {
    for _ in 0..4 {
        let sum: f64 = edges.iter().map(|t| t.probability).sum();
        if sum <= 1.0 + PROB_SUM_TOLERANCE || sum > 1.0 + 1e-9 {
            return;
        }
        let Some(max) = edges
            .iter_mut()
            .max_by(|a, b| a.probability.total_cmp(&b.probability))
        else {
            return;
        };
        let lowered = canonical_probability(max.probability - (sum - 1.0));
        max.probability = if lowered < max.probability {
            lowered
        } else {
            canonical_probability(max.probability * (1.0 - 1e-11))
        };
    }
}

fn parse_state_line(rest: &str, expected: usize) -> Result<StateSpec, String> {
    let mut fields = rest.split_whitespace();
    let index: usize = fields
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or("missing state index")?;
    if index != expected {
        return Err(format!("state {index} out of order, expected {expected}"));
    }
    let mut kv = BTreeMap::new();
    for f in fields {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| format!("bad field {f:?}"))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| format!("missing {k}"));
    let action = match get("action")? {
        "pad" => ActionKind::SendPadding,
        "block" => ActionKind::BlockOutgoing,
        "noop" => ActionKind::NoOp,
        other => return Err(format!("unknown action {other:?}")),
    };
    let dist = |k: &str| -> Result<Option<DistributionSpec>, String> {
        match get(k)? {
            "none" => Ok(None),
            d => d.parse().map(Some).map_err(|e| format!("{k}: {e}")),
        }
    };
    let flag = |k: &str| -> Result<bool, String> {
        match get(k)? {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(format!("{k} must be 0 or 1, got {other:?}")),
        }
    };
    Ok(StateSpec {
        action,
        action_dist: dist("adist")?,
        timeout_dist: dist("tdist")?,
        limit_dist: dist("ldist")?,
        bypass: flag("bypass")?,
        replace: flag("replace")?,
        transitions: BTreeMap::new(),
    })
}

fn parse_transition_line(rest: &str) -> Result<(usize, EventKind, Transition), String> {
    let f: Vec<&str> = rest.split_whitespace().collect();
    let [event, from, "->", to, p] = f.as_slice() else {
        return Err(format!("bad transition {rest:?}"));
    };
    let event: EventKind = event.parse()?;
    let from: usize = from.parse().map_err(|_| format!("bad source {from:?}"))?;
    let target = if *to == "END" {
        Target::End
    } else {
        Target::State(to.parse().map_err(|_| format!("bad target {to:?}"))?)
    };
    let probability: f64 = p
        .strip_prefix("p=")
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| format!("bad probability {p:?}"))?;
    Ok((
        from,
        event,
        Transition {
            target,
            probability,
        },
    ))
}
