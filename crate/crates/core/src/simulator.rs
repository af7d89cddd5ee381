//! Discrete-event simulation of a client and a relay running machines over a
//! base trace.
//!
//! Outgoing base cells leave the client at their trace time. Incoming base
//! cells leave the relay one delay earlier so that, undisturbed, they reach the
//! client at their trace time. Internally time is kept in integer nanoseconds
//! shifted by one delay so that every timestamp is non-negative.
//!
//! Simultaneous events are ordered by (time, client before relay, kind,
//! insertion order) where the kind order is: block expiry, block enactment,
//! cell arrival, base send, padding timeout.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;

use crate::framework::{
    seeded_rng, BlockDuration, DefenseAction, EventKind, FrameworkEvent, Machine, MachineRuntime,
    CELL_SIZE,
};
use crate::trace::{to_nanos, Direction, Trace, TraceEvent};

/// Simulated one-way client-relay delay used throughout the evaluation.
pub const DEFAULT_DELAY_US: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub one_way_delay_us: u64,
    pub seed: u64,
    /// Upper bound on processed simulation events.
    pub max_events: u64,
    /// When the run ends with real cells still held back by blocking, drop them
    /// instead of failing.
    pub drop_stalled: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            one_way_delay_us: DEFAULT_DELAY_US,
            seed: 0,
            max_events: 5_000_000,
            drop_stalled: false,
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("simulation exceeded its budget of {0} events")]
    BudgetExceeded(u64),
    #[error("{0} real cell(s) were still blocked when the simulation ended")]
    Stalled(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Client,
    Relay,
}

impl Side {
    fn index(self) -> usize {
        self as usize
    }

    fn peer(self) -> Side {
        match self {
            Side::Client => Side::Relay,
            Side::Relay => Side::Client,
        }
    }

    /// Direction of cells this side sends.
    pub fn direction(self) -> Direction {
        match self {
            Side::Client => Direction::Outgoing,
            Side::Relay => Direction::Incoming,
        }
    }
}

/// One event fed to a runtime and the action it returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogEntry {
    pub event: FrameworkEvent,
    pub action: Option<DefenseAction>,
}

/// Everything each runtime saw during a run, indexed by machine position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimLog {
    pub client: Vec<Vec<LogEntry>>,
    pub relay: Vec<Vec<LogEntry>>,
}

/// Random stream used by machine `index` on `side`.
pub fn runtime_stream(side: Side, index: usize) -> u64 {
    ((side.index() as u64) << 32) | index as u64
}

/// Runs `base` through the given machines and returns the client-side trace.
pub fn simulate(
    base: &Trace,
    client: &[Arc<Machine>],
    relay: &[Arc<Machine>],
    cfg: &SimConfig,
) -> Result<Trace, SimError> {
    Sim::new(base, client, relay, cfg, false)
        .run()
        .map(|(t, _)| t)
}

/// Like [`simulate`], also returning the per-runtime event log.
pub fn simulate_with_log(
    base: &Trace,
    client: &[Arc<Machine>],
    relay: &[Arc<Machine>],
    cfg: &SimConfig,
) -> Result<(Trace, SimLog), SimError> {
    Sim::new(base, client, relay, cfg, true)
        .run()
        .map(|(t, log)| (t, log.unwrap_or_default()))
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    BlockExpiry {
        until: i64,
    },
    EnactBlock {
        machine: usize,
        generation: u64,
        duration: Option<i64>,
        bypass: bool,
        replace: bool,
    },
    Arrival {
        padding: bool,
    },
    BaseSend,
    PaddingTimer {
        machine: usize,
        generation: u64,
        cells: u32,
        bypass: bool,
        replace: bool,
    },
}

impl Kind {
    fn rank(&self) -> u8 {
        match self {
            Kind::BlockExpiry { .. } => 0,
            Kind::EnactBlock { .. } => 1,
            Kind::Arrival { .. } => 2,
            Kind::BaseSend => 3,
            Kind::PaddingTimer { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    time: i64,
    side: Side,
    seq: u64,
    kind: Kind,
}

impl Entry {
    fn key(&self) -> (i64, Side, u8, u64) {
        (self.time, self.side, self.kind.rank(), self.seq)
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Per-endpoint state.
struct Endpoint {
    runtimes: Vec<MachineRuntime>,
    /// Bumped whenever a machine's pending action is replaced or cancelled.
    generations: Vec<u64>,
    blocked_until: i64,
    bypassable: bool,
    /// Original send times of deferred base cells.
    queue: VecDeque<i64>,
}

impl Endpoint {
    fn new(side: Side, machines: &[Arc<Machine>], seed: u64) -> Self {
        let runtimes = machines
            .iter()
            .enumerate()
            .map(|(i, m)| {
                MachineRuntime::new(Arc::clone(m), seeded_rng(seed, runtime_stream(side, i)))
            })
            .collect::<Vec<_>>();
        Self {
            generations: vec![0; runtimes.len()],
            runtimes,
            blocked_until: i64::MIN,
            bypassable: false,
            queue: VecDeque::new(),
        }
    }

    fn is_blocked(&self, t: i64) -> bool {
        t < self.blocked_until
    }
}

#[derive(Clone, Copy)]
enum Targets {
    All,
    Only(usize),
}

struct Sim {
    endpoints: [Endpoint; 2],
    heap: BinaryHeap<Reverse<Entry>>,
    seq: u64,
    delay: i64,
    output: Vec<(i64, Direction, bool)>,
    max_events: u64,
    drop_stalled: bool,
    log: Option<SimLog>,
    id: String,
}

impl Sim {
    fn new(
        base: &Trace,
        client: &[Arc<Machine>],
        relay: &[Arc<Machine>],
        cfg: &SimConfig,
        record: bool,
    ) -> Self {
        let delay = i64::try_from(cfg.one_way_delay_us)
            .unwrap_or(i64::MAX / 4)
            .saturating_mul(1000);
        let log = record.then(|| SimLog {
            client: vec![Vec::new(); client.len()],
            relay: vec![Vec::new(); relay.len()],
        });
        let mut sim = Self {
            endpoints: [
                Endpoint::new(Side::Client, client, cfg.seed),
                Endpoint::new(Side::Relay, relay, cfg.seed),
            ],
            heap: BinaryHeap::with_capacity(base.len() * 2),
            seq: 0,
            delay,
            output: Vec::with_capacity(base.len() * 2),
            max_events: cfg.max_events,
            drop_stalled: cfg.drop_stalled,
            log,
            id: base.id.clone(),
        };
        for e in &base.events {
            let t = to_nanos(e.time);
            // Internal clock = client clock + delay.
            let (side, at) = match e.direction {
                Direction::Outgoing => (Side::Client, t + delay),
                Direction::Incoming => (Side::Relay, t),
            };
            sim.push(at, side, Kind::BaseSend);
        }
        sim
    }

    fn push(&mut self, time: i64, side: Side, kind: Kind) {
        self.seq += 1;
        self.heap.push(Reverse(Entry {
            time,
            side,
            seq: self.seq,
            kind,
        }));
    }

    fn run(mut self) -> Result<(Trace, Option<SimLog>), SimError> {
        let mut processed = 0u64;
        while let Some(Reverse(entry)) = self.heap.pop() {
            processed += 1;
            if processed > self.max_events {
                return Err(SimError::BudgetExceeded(self.max_events));
            }
            self.handle(entry);
        }
        let stalled: usize = self.endpoints.iter().map(|e| e.queue.len()).sum();
        if stalled > 0 {
            if !self.drop_stalled {
                return Err(SimError::Stalled(stalled));
            }
            log::debug!("{}: dropped {stalled} blocked cell(s)", self.id);
        }
        let delay = self.delay;
        let events = self
            .output
            .iter()
            .map(|&(t, dir, padding)| TraceEvent::new((t - delay) as f64 / 1e9, dir, padding))
            .collect();
        Ok((
            Trace {
                id: self.id,
                events,
            },
            self.log,
        ))
    }

    fn handle(&mut self, entry: Entry) {
        let Entry {
            time: t,
            side,
            kind,
            ..
        } = entry;
        match kind {
            Kind::BaseSend => {
                let ep = &mut self.endpoints[side.index()];
                if ep.is_blocked(t) || !ep.queue.is_empty() {
                    ep.queue.push_back(t);
                } else {
                    self.send_real(side, t);
                }
            }
            Kind::Arrival { padding } => {
                if side == Side::Client {
                    self.output.push((t, Direction::Incoming, padding));
                }
                let kind = if padding {
                    EventKind::PaddingRecv
                } else {
                    EventKind::NonPaddingRecv
                };
                self.feed(side, Targets::All, kind, t);
            }
            Kind::PaddingTimer {
                machine,
                generation,
                cells,
                bypass,
                replace,
            } => {
                let ep = &self.endpoints[side.index()];
                if ep.generations[machine] != generation {
                    return;
                }
                if ep.is_blocked(t) && !(bypass && ep.bypassable) {
                    return;
                }
                for _ in 0..cells {
                    let ep = &mut self.endpoints[side.index()];
                    if replace && ep.queue.pop_front().is_some() {
                        self.emit(side, t, false);
                        self.feed(side, Targets::Only(machine), EventKind::PaddingSent, t);
                        self.feed(side, Targets::All, EventKind::NonPaddingSent, t);
                    } else {
                        self.emit(side, t, true);
                        self.feed(side, Targets::Only(machine), EventKind::PaddingSent, t);
                    }
                }
            }
            Kind::EnactBlock {
                machine,
                generation,
                duration,
                bypass,
                replace,
            } => {
                let ep = &mut self.endpoints[side.index()];
                if ep.generations[machine] != generation {
                    return;
                }
                let until = duration.map_or(i64::MAX, |d| t.saturating_add(d));
                if replace || until > ep.blocked_until {
                    ep.blocked_until = until;
                    ep.bypassable = bypass;
                    if until != i64::MAX {
                        self.push(until, side, Kind::BlockExpiry { until });
                    }
                }
                self.feed(side, Targets::All, EventKind::BlockingBegin, t);
            }
            Kind::BlockExpiry { until } => {
                let ep = &self.endpoints[side.index()];
                if ep.blocked_until != until || ep.is_blocked(t) {
                    return;
                }
                while self.endpoints[side.index()].queue.pop_front().is_some() {
                    self.send_real(side, t);
                }
            }
        }
    }

    fn send_real(&mut self, side: Side, t: i64) {
        self.emit(side, t, false);
        self.feed(side, Targets::All, EventKind::NonPaddingSent, t);
    }

    fn emit(&mut self, side: Side, t: i64, padding: bool) {
        if side == Side::Client {
            self.output.push((t, Direction::Outgoing, padding));
        }
        self.push(
            t.saturating_add(self.delay),
            side.peer(),
            Kind::Arrival { padding },
        );
    }

    fn feed(&mut self, side: Side, targets: Targets, kind: EventKind, t: i64) {
        let event = FrameworkEvent::new(kind, (t / 1000) as u64);
        let range = match targets {
            Targets::All => 0..self.endpoints[side.index()].runtimes.len(),
            Targets::Only(i) => i..i + 1,
        };
        for i in range {
            let action = self.endpoints[side.index()].runtimes[i].transition(&event);
            if let Some(log) = &mut self.log {
                let per_side = match side {
                    Side::Client => &mut log.client,
                    Side::Relay => &mut log.relay,
                };
                per_side[i].push(LogEntry { event, action });
            }
            if let Some(action) = action {
                self.apply(side, i, action, t);
            }
        }
    }

    fn apply(&mut self, side: Side, machine: usize, action: DefenseAction, t: i64) {
        let ep = &mut self.endpoints[side.index()];
        ep.generations[machine] += 1;
        let generation = ep.generations[machine];
        match action {
            DefenseAction::Cancel => {}
            DefenseAction::SchedulePadding {
                timeout,
                bytes,
                bypass,
                replace,
            } => {
                let kind = Kind::PaddingTimer {
                    machine,
                    generation,
                    cells: (bytes / CELL_SIZE).max(1),
                    bypass,
                    replace,
                };
                self.push(t.saturating_add(nanos(timeout)), side, kind);
            }
            DefenseAction::ScheduleBlocking {
                timeout,
                duration,
                bypass,
                replace,
            } => {
                let duration = match duration {
                    BlockDuration::Finite(us) => Some(nanos(us)),
                    BlockDuration::Infinite => None,
                };
                let kind = Kind::EnactBlock {
                    machine,
                    generation,
                    duration,
                    bypass,
                    replace,
                };
                self.push(t.saturating_add(nanos(timeout)), side, kind);
            }
        }
    }
}

fn nanos(us: u64) -> i64 {
    i64::try_from(us).unwrap_or(i64::MAX).saturating_mul(1000)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::{DistributionSpec, StateSpec, Target};

    fn base() -> Trace {
        Trace::new(
            "b",
            vec![
                TraceEvent::real(0.0, Direction::Outgoing),
                TraceEvent::real(0.05, Direction::Incoming),
                TraceEvent::real(0.06, Direction::Incoming),
                TraceEvent::real(0.3, Direction::Outgoing),
            ],
        )
    }

    #[test]
    fn no_machines_reproduces_base() {
        let b = base();
        let out = simulate(&b, &[], &[], &SimConfig::default()).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn single_padding_cell_after_timeout() {
        // On the first NonPaddingSent, pad once 1 ms later, then end.
        let m = Arc::new(
            Machine::new(
                vec![
                    StateSpec::noop().on(EventKind::NonPaddingSent, Target::State(1), 1.0),
                    StateSpec::padding(
                        DistributionSpec::point(512.0),
                        DistributionSpec::point(1000.0),
                    )
                    .on(EventKind::PaddingSent, Target::End, 1.0),
                ],
                0,
            )
            .unwrap(),
        );
        let out = simulate(&base(), &[m], &[], &SimConfig::default()).unwrap();
        let pads: Vec<_> = out.events.iter().filter(|e| e.is_padding).collect();
        assert_eq!(pads.len(), 1);
        assert_eq!(pads[0].direction, Direction::Outgoing);
        assert!((pads[0].time - 0.001).abs() < 1e-12);
        assert_eq!(out.count(Direction::Outgoing, false), 2);
    }

    #[test]
    fn finite_block_delays_outgoing_cells() {
        // Block 100 ms after the first outgoing cell; the next one at 0.3 s is
        // not affected, so block the relay instead.
        let m = Arc::new(
            Machine::new(
                vec![
                    StateSpec::noop().on(EventKind::NonPaddingSent, Target::State(1), 1.0),
                    StateSpec::blocking(
                        DistributionSpec::point(100_000.0),
                        DistributionSpec::point(0.0),
                    ),
                ],
                0,
            )
            .unwrap(),
        );
        let out = simulate(&base(), &[], &[m], &SimConfig::default()).unwrap();
        let incoming: Vec<f64> = out
            .events
            .iter()
            .filter(|e| e.direction == Direction::Incoming)
            .map(|e| e.time)
            .collect();
        // Relay sent the first cell at 0.04, blocked until 0.14; the second
        // cell (send 0.05) is released at 0.14 and arrives at 0.15.
        assert_eq!(incoming.len(), 2);
        assert!((incoming[0] - 0.05).abs() < 1e-12);
        assert!((incoming[1] - 0.15).abs() < 1e-12);
    }

    #[test]
    fn infinite_block_stalls_unless_dropped() {
        let m = Arc::new(
            Machine::new(
                vec![
                    StateSpec::noop().on(EventKind::NonPaddingSent, Target::State(1), 1.0),
                    StateSpec::blocking(
                        DistributionSpec::point(f64::INFINITY),
                        DistributionSpec::point(0.0),
                    ),
                ],
                0,
            )
            .unwrap(),
        );
        let cfg = SimConfig::default();
        assert_eq!(
            simulate(&base(), &[Arc::clone(&m)], &[], &cfg),
            Err(SimError::Stalled(1))
        );
        let cfg = SimConfig {
            drop_stalled: true,
            ..cfg
        };
        let out = simulate(&base(), &[m], &[], &cfg).unwrap();
        assert_eq!(out.count(Direction::Outgoing, false), 1);
    }

    #[test]
    fn runaway_machine_hits_budget() {
        let m = Arc::new(
            Machine::new(
                vec![StateSpec::padding(
                    DistributionSpec::point(512.0),
                    DistributionSpec::point(0.0),
                )
                .on(EventKind::PaddingSent, Target::State(0), 1.0)
                .on(EventKind::NonPaddingSent, Target::State(0), 1.0)],
                0,
            )
            .unwrap(),
        );
        let cfg = SimConfig {
            max_events: 10_000,
            ..SimConfig::default()
        };
        assert_eq!(
            simulate(&base(), &[m], &[], &cfg),
            Err(SimError::BudgetExceeded(10_000))
        );
    }
}
