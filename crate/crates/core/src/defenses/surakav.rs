//! Surakav: burst regulation against a reference burst sequence, and the
//! machine pair that replays a reference exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use super::{finite_positive, invalid, DefenseError};
use crate::framework::{DistributionSpec, EventKind, Machine, StateSpec, Target, CELL_SIZE};
use crate::trace::{Direction, Trace, TraceEvent};

/// Bursts per machine pair beyond which references are truncated.
pub const DEFAULT_MAX_BURSTS: usize = 8000;
/// Timeout between cells of a SEND state, µs.
pub const DEFAULT_SEND_TIMEOUT_US: f64 = 5.0;

/// Alternating burst sizes starting with an outgoing burst.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BurstSequence {
    sizes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BurstError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("burst {index} has size 0")]
    ZeroBurst { index: usize },
    #[error("burst sequence is empty")]
    Empty,
    #[error("trace starts with an incoming burst")]
    StartsIncoming,
}

impl BurstSequence {
    /// `sizes[2k]` is outgoing burst k, `sizes[2k + 1]` incoming burst k.
    pub fn new(sizes: Vec<u32>) -> Result<Self, BurstError> {
        if sizes.is_empty() {
            return Err(BurstError::Empty);
        }
        if let Some(index) = sizes.iter().position(|&s| s == 0) {
            return Err(BurstError::ZeroBurst { index });
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn direction(index: usize) -> Direction {
        if index.is_multiple_of(2) {
            Direction::Outgoing
        } else {
            Direction::Incoming
        }
    }

    pub fn total_cells(&self) -> u64 {
        self.sizes.iter().map(|&s| s as u64).sum()
    }

    /// Bursts of a trace, padding included.
    pub fn from_trace(trace: &Trace) -> Result<Self, BurstError> {
        let runs = bursts(trace);
        match runs.first() {
            None => Err(BurstError::Empty),
            Some((Direction::Incoming, _)) => Err(BurstError::StartsIncoming),
            Some(_) => Self::new(runs.into_iter().map(|(_, n)| n).collect()),
        }
    }

    /// Repeats the sequence until it holds at least `min_cells` cells. An
    /// odd-length sequence first gets its first incoming burst appended (or a
    /// single cell if it has none) so the alternation survives tiling.
    pub fn tiled(&self, min_cells: u64) -> Self {
        let mut unit = self.sizes.clone();
        if unit.len() % 2 == 1 {
            unit.push(self.sizes.get(1).copied().unwrap_or(1));
        }
        let unit_cells: u64 = unit.iter().map(|&s| s as u64).sum();
        let reps = min_cells.div_ceil(unit_cells).max(1) as usize;
        let mut sizes = Vec::with_capacity(unit.len() * reps);
        for _ in 0..reps {
            sizes.extend_from_slice(&unit);
        }
        Self { sizes }
    }

    /// First `max_bursts` bursts; the flag tells whether anything was cut.
    pub fn truncated(&self, max_bursts: usize) -> (Self, bool) {
        if self.sizes.len() <= max_bursts {
            (self.clone(), false)
        } else {
            (
                Self {
                    sizes: self.sizes[..max_bursts].to_vec(),
                },
                true,
            )
        }
    }

    /// `out<TAB>in` per line; the last incoming size may be 0 for "none".
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for pair in self.sizes.chunks(2) {
            writeln!(out, "{}\t{}", pair[0], pair.get(1).copied().unwrap_or(0)).unwrap();
        }
        out
    }
}

impl FromStr for BurstSequence {
    type Err = BurstError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut sizes = Vec::new();
        let mut ended = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| BurstError::Parse {
                line: i + 1,
                message,
            };
            if let Some(at) = ended {
                return Err(err(format!("burst pair after final pair on line {at}")));
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(err(format!("expected 2 columns, got {}", cols.len())));
            }
            let parse = |s: &str| {
                s.parse::<u32>()
                    .map_err(|_| err(format!("bad burst size {s:?}")))
            };
            let (out, inc) = (parse(cols[0])?, parse(cols[1])?);
            if out == 0 {
                return Err(err("outgoing burst size must be >= 1".into()));
            }
            sizes.push(out);
            if inc == 0 {
                ended = Some(i + 1);
            } else {
                sizes.push(inc);
            }
        }
        Self::new(sizes)
    }
}

/// Maximal same-direction runs of a trace.
pub fn bursts(trace: &Trace) -> Vec<(Direction, u32)> {
    let mut runs: Vec<(Direction, u32)> = Vec::new();
    for e in &trace.events {
        match runs.last_mut() {
            Some((d, n)) if *d == e.direction => *n += 1,
            _ => runs.push((e.direction, 1)),
        }
    }
    runs
}

/// Lower and upper burst thresholds `(⌊(1-δ)b⌋, ⌊(1+δ)b⌋)`.
pub fn burst_thresholds(b: u32, delta: f64) -> (u32, u32) {
    let b = b as f64;
    (
        floor_snapped((1.0 - delta) * b),
        floor_snapped((1.0 + delta) * b),
    )
}

// Floor that treats values within rounding error of an integer as that
// integer, so 1.4 * 45 gives 63 rather than 62.
fn floor_snapped(x: f64) -> u32 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as u32
    } else {
        x.floor() as u32
    }
}

/// Real and padding cells of a burst for a reference size `b` given `queued`
/// real cells.
pub fn burst_size(queued: u32, b: u32, delta: f64) -> (u32, u32) {
    let (lo, hi) = burst_thresholds(b, delta);
    if queued < lo {
        (queued, lo - queued)
    } else {
        (queued.min(hi), 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurakavParams {
    /// Burst size tolerance in (0, 1).
    pub delta: f64,
    /// Skip probability; sampled from U(0, 1) per download when `None`.
    pub q: Option<f64>,
    /// Gap before the next outgoing burst after a skipped response, seconds.
    pub rho: f64,
    /// Client-relay round trip, seconds.
    pub rtt: f64,
    /// Reference length as a multiple of the base trace length.
    pub scale: f64,
}

impl Default for SurakavParams {
    fn default() -> Self {
        Self {
            delta: 0.6,
            q: None,
            rho: 0.1,
            rtt: 0.02,
            scale: 80.0,
        }
    }
}

impl SurakavParams {
    pub fn validate(&self) -> Result<(), DefenseError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(
                "δ",
                format!("must lie in (0, 1), got {}", self.delta),
            ));
        }
        if let Some(q) = self.q {
            if !(0.0..=1.0).contains(&q) {
                return Err(invalid("q", format!("must lie in [0, 1], got {q}")));
            }
        }
        finite_positive("ρ", self.rho)?;
        finite_positive("rtt", self.rtt)?;
        finite_positive("scale", self.scale)
    }
}

/// Round-based reference regulator. Each round the client sends a burst
/// for the next outgoing reference size and the relay answers one round trip
/// later, unless its queue is empty and it skips with probability `q`.
pub fn surakav_reference<R: Rng + ?Sized>(
    base: &Trace,
    reference: &BurstSequence,
    p: &SurakavParams,
    rng: &mut R,
) -> Result<Trace, DefenseError> {
    p.validate()?;
    if base.last_real_time().is_none() {
        return Err(DefenseError::EmptyBase);
    }
    let q = p.q.unwrap_or_else(|| rng.random::<f64>());
    let times = |dir| -> Vec<f64> {
        base.real_events()
            .filter(|e| e.direction == dir)
            .map(|e| e.time)
            .collect()
    };
    let out_times = times(Direction::Outgoing);
    let in_times = times(Direction::Incoming);
    let (mut sent_out, mut sent_in) = (0usize, 0usize);
    let mut events = Vec::new();
    let mut now = 0.0;
    let sizes = reference.sizes();
    let mut k = 0;
    while sent_out < out_times.len() || sent_in < in_times.len() {
        if k >= sizes.len() {
            return Err(DefenseError::ReferenceExhausted {
                bursts: sizes.len(),
                remaining: out_times.len() - sent_out + in_times.len() - sent_in,
            });
        }
        let queued = out_times[sent_out..].partition_point(|&t| t <= now) as u32;
        let (real, pad) = burst_size(queued, sizes[k], p.delta);
        sent_out += real as usize;
        push_burst(&mut events, now, Direction::Outgoing, real, pad);

        let reply = now + p.rtt;
        let mut skipped = true;
        if let Some(&b) = sizes.get(k + 1) {
            let queued = in_times[sent_in..].partition_point(|&t| t <= reply) as u32;
            if queued > 0 || rng.random::<f64>() >= q {
                let (real, pad) = burst_size(queued, b, p.delta);
                sent_in += real as usize;
                push_burst(&mut events, reply, Direction::Incoming, real, pad);
                skipped = false;
            }
        }
        now += if skipped { p.rho } else { p.rtt };
        k += 2;
    }
    Ok(Trace::new(base.id.clone(), events))
}

fn push_burst(events: &mut Vec<TraceEvent>, t: f64, dir: Direction, real: u32, pad: u32) {
    events.extend((0..real).map(|_| TraceEvent::real(t, dir)));
    events.extend((0..pad).map(|_| TraceEvent::padding(t, dir)));
}

#[derive(Debug, Clone)]
pub struct SurakavMachines {
    pub client: Machine,
    pub relay: Machine,
    /// Bursts of the reference actually encoded.
    pub bursts: usize,
    pub truncated: bool,
}

/// Builds the client/relay pair replaying `reference` burst by burst.
///
/// The first outgoing cell is the one that starts both machines and goes out
/// before blocking is in place, so the first SEND/RECV pair covers one cell
/// less than the first outgoing burst.
pub fn gen_surakav_machines(
    reference: &BurstSequence,
    max_bursts: usize,
    send_timeout_us: f64,
) -> Result<SurakavMachines, DefenseError> {
    if max_bursts == 0 {
        return Err(invalid("max_bursts", "must be at least 1"));
    }
    if !(send_timeout_us.is_finite() && send_timeout_us >= 0.0) {
        return Err(invalid(
            "send timeout",
            format!("must be >= 0, got {send_timeout_us}"),
        ));
    }
    if reference.is_empty() {
        return Err(invalid("reference", "no bursts"));
    }
    let (reference, truncated) = reference.truncated(max_bursts);
    let mut client = vec![start_state(), block_state()];
    let mut relay = vec![start_state(), block_state()];
    for (i, &size) in reference.sizes().iter().enumerate() {
        let size = if i == 0 { size - 1 } else { size };
        if size == 0 {
            continue;
        }
        let (send, recv) = (
            send_state(client.len(), size, send_timeout_us),
            recv_state(client.len(), size),
        );
        if BurstSequence::direction(i) == Direction::Outgoing {
            client.push(send);
            relay.push(recv);
        } else {
            client.push(recv);
            relay.push(send);
        }
    }
    for states in [&mut client, &mut relay] {
        link_chain(states);
    }
    Ok(SurakavMachines {
        client: Machine::new(client, 0).expect("generated client machine is well formed"),
        relay: Machine::new(relay, 0).expect("generated relay machine is well formed"),
        bursts: reference.len(),
        truncated,
    })
}

fn start_state() -> StateSpec {
    StateSpec::noop()
        .on(EventKind::NonPaddingSent, Target::State(1), 1.0)
        .on(EventKind::NonPaddingRecv, Target::State(1), 1.0)
}

fn block_state() -> StateSpec {
    StateSpec::blocking(
        DistributionSpec::point(f64::INFINITY),
        DistributionSpec::point(0.0),
    )
    .with_flags(true, true)
}

fn send_state(me: usize, size: u32, timeout_us: f64) -> StateSpec {
    let cell = CELL_SIZE as f64;
    StateSpec::padding(
        DistributionSpec::uniform(cell, cell),
        DistributionSpec::uniform(timeout_us, timeout_us),
    )
    .with_flags(true, true)
    .with_limit(DistributionSpec::point(size as f64))
    .on(EventKind::PaddingSent, Target::State(me), 1.0)
}

fn recv_state(me: usize, size: u32) -> StateSpec {
    block_state()
        .with_limit(DistributionSpec::point(size as f64))
        .on(EventKind::PaddingRecv, Target::State(me), 1.0)
        .on(EventKind::NonPaddingRecv, Target::State(me), 1.0)
}

// BLOCK advances on BlockingBegin, burst states on LimitReached.
fn link_chain(states: &mut [StateSpec]) {
    let n = states.len();
    let after = |i: usize| {
        if i + 1 < n {
            Target::State(i + 1)
        } else {
            Target::End
        }
    };
    states[1] = states[1]
        .clone()
        .on(EventKind::BlockingBegin, after(1), 1.0);
    for (i, s) in states.iter_mut().enumerate().skip(2) {
        *s = s.clone().on(EventKind::LimitReached, after(i), 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::ActionKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn threshold_examples() {
        assert_eq!(burst_thresholds(10, 0.4), (6, 14));
        assert_eq!(burst_thresholds(10, 1e-12), (10, 10));
        assert_eq!(burst_thresholds(1, 0.6), (0, 1));
        assert_eq!(burst_size(20, 10, 0.4), (14, 0));
        assert_eq!(burst_size(3, 10, 0.4), (3, 3));
        assert_eq!(burst_size(8, 10, 0.4), (8, 0));
    }

    #[test]
    fn text_round_trip() {
        let s: BurstSequence = "3\t5\n1\t2\n4\t0\n".parse().unwrap();
        assert_eq!(s.sizes(), &[3, 5, 1, 2, 4]);
        assert_eq!(s.to_text(), "3\t5\n1\t2\n4\t0\n");
        assert!("3\t0\n1\t2\n".parse::<BurstSequence>().is_err());
        assert!("0\t2\n".parse::<BurstSequence>().is_err());
        assert!(matches!(
            "3 x".parse::<BurstSequence>(),
            Err(BurstError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn two_burst_topology() {
        let r = BurstSequence::new(vec![3, 2]).unwrap();
        let m = gen_surakav_machines(&r, DEFAULT_MAX_BURSTS, 5.0).unwrap();
        // START, BLOCK, then one state per burst.
        assert_eq!(m.client.len(), 4);
        assert_eq!(m.relay.len(), 4);
        assert_eq!(m.client.state(2).action, ActionKind::SendPadding);
        assert_eq!(m.client.state(3).action, ActionKind::BlockOutgoing);
        assert_eq!(m.relay.state(2).action, ActionKind::BlockOutgoing);
        assert_eq!(m.relay.state(3).action, ActionKind::SendPadding);
        // First outgoing burst loses the trigger cell.
        assert_eq!(
            m.client.state(2).limit_dist,
            Some(DistributionSpec::point(2.0))
        );
        assert_eq!(
            m.client.state(3).transitions[&EventKind::LimitReached][0].target,
            Target::End
        );
        assert!(!m.truncated);
    }

    #[test]
    fn single_cell_first_burst_is_skipped() {
        let r = BurstSequence::new(vec![1, 4, 2]).unwrap();
        let m = gen_surakav_machines(&r, DEFAULT_MAX_BURSTS, 5.0).unwrap();
        assert_eq!(m.client.len(), 4);
        assert_eq!(m.client.state(2).action, ActionKind::BlockOutgoing);
    }

    #[test]
    fn truncation_is_reported() {
        let r = BurstSequence::new(vec![2; 30]).unwrap();
        let m = gen_surakav_machines(&r, 10, 5.0).unwrap();
        assert!(m.truncated);
        assert_eq!(m.bursts, 10);
        assert_eq!(m.client.len(), 12);
    }

    #[test]
    fn tiling_keeps_alternation() {
        let r = BurstSequence::new(vec![2, 3, 1]).unwrap();
        let t = r.tiled(20);
        assert!(t.total_cells() >= 20);
        assert_eq!(t.len() % 2, 0);
        assert_eq!(&t.sizes()[..4], &[2, 3, 1, 3]);
    }

    #[test]
    fn matching_base_passes_through() {
        let rtt = 0.02;
        let sizes = [3u32, 5, 2, 7, 1, 4];
        let mut events = Vec::new();
        let mut t = 0.0;
        for pair in sizes.chunks(2) {
            push_burst(&mut events, t, Direction::Outgoing, pair[0], 0);
            push_burst(&mut events, t + rtt, Direction::Incoming, pair[1], 0);
            t += rtt;
        }
        let base = Trace::new("b", events);
        let reference = BurstSequence::new(sizes.to_vec()).unwrap();
        let p = SurakavParams {
            delta: 0.4,
            q: Some(0.5),
            ..SurakavParams::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let out = surakav_reference(&base, &reference, &p, &mut rng).unwrap();
        assert!(!out.has_padding());
        assert_eq!(BurstSequence::from_trace(&out).unwrap(), reference);
    }

    #[test]
    fn skip_with_certainty_when_relay_idle() {
        let base = Trace::new("b", vec![TraceEvent::real(0.0, Direction::Outgoing)]);
        let reference = BurstSequence::new(vec![1, 5, 1, 5]).unwrap();
        let p = SurakavParams {
            q: Some(1.0),
            ..SurakavParams::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let out = surakav_reference(&base, &reference, &p, &mut rng).unwrap();
        assert_eq!(out.count(Direction::Incoming, true), 0);
    }

    #[test]
    fn exhausted_reference_is_an_error() {
        let base = Trace::new("b", vec![TraceEvent::real(0.0, Direction::Incoming)]);
        let reference = BurstSequence::new(vec![1]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let e = surakav_reference(&base, &reference, &SurakavParams::default(), &mut rng);
        assert!(matches!(e, Err(DefenseError::ReferenceExhausted { .. })));
    }
}
