//! Execution of a single machine against a stream of events.
//!
//! Semantics:
//! - Entering a state samples its limit, timeout, and action.
//! - A self-transition counts toward the limit and resamples timeout and action.
//!   The self-transition that brings the count to the sampled limit fires
//!   `LimitReached` synchronously instead of producing an action, so a state
//!   with limit `L` produces `L` actions in total (entry plus `L - 1`
//!   self-transitions).
//! - Residual transition mass (row sum below 1) means the event is ignored.
//! - Reaching `StateEnd` yields a final `Cancel`; afterwards nothing happens.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::event::{EventKind, FrameworkEvent, CELL_SIZE};
use super::machine::{ActionKind, Machine, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockDuration {
    Finite(u64),
    Infinite,
}

/// An instruction for the host, all times in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DefenseAction {
    SchedulePadding {
        timeout: u64,
        bytes: u32,
        bypass: bool,
        replace: bool,
    },
    ScheduleBlocking {
        timeout: u64,
        duration: BlockDuration,
        bypass: bool,
        replace: bool,
    },
    /// Drop any pending action of this machine.
    Cancel,
}

/// Builds the generator used by one runtime. Distinct streams of the same seed
/// are independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct MachineRuntime {
    machine: Arc<Machine>,
    /// `None` once the machine reached `StateEnd`.
    current: Option<usize>,
    self_transitions: u64,
    limit: Option<u64>,
    last_timestamp: u64,
    rng: ChaCha12Rng,
}

impl MachineRuntime {
    pub fn new(machine: Arc<Machine>, rng: ChaCha12Rng) -> Self {
        let start = machine.start();
        let mut rt = Self {
            machine,
            current: Some(start),
            self_transitions: 0,
            limit: None,
            last_timestamp: 0,
            rng,
        };
        rt.limit = rt.sample_limit(start);
        rt
    }

    pub fn with_seed(machine: Arc<Machine>, seed: u64) -> Self {
        Self::new(machine, seeded_rng(seed, 0))
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    pub fn current_state(&self) -> Option<usize> {
        self.current
    }

    pub fn is_terminated(&self) -> bool {
        self.current.is_none()
    }

    pub fn self_transition_count(&self) -> u64 {
        self.self_transitions
    }

    pub fn sampled_limit(&self) -> Option<u64> {
        self.limit
    }

    /// Processes one event and returns the resulting action, if any.
    pub fn transition(&mut self, event: &FrameworkEvent) -> Option<DefenseAction> {
        debug_assert!(
            event.timestamp >= self.last_timestamp,
            "event timestamps must be non-decreasing"
        );
        self.last_timestamp = self.last_timestamp.max(event.timestamp);
        self.step(event.kind)
    }

    fn step(&mut self, kind: EventKind) -> Option<DefenseAction> {
        let current = self.current?;
        let target = self.sample_target(current, kind)?;
        match target {
            Target::End => {
                self.current = None;
                Some(DefenseAction::Cancel)
            }
            Target::State(s) if s == current => {
                if let Some(limit) = self.limit {
                    if self.self_transitions >= limit {
                        return None;
                    }
                }
                self.self_transitions += 1;
                if self.limit == Some(self.self_transitions) {
                    return self.step(EventKind::LimitReached);
                }
                self.sample_action(current)
            }
            Target::State(s) => {
                self.current = Some(s);
                self.self_transitions = 0;
                self.limit = self.sample_limit(s);
                self.sample_action(s)
            }
        }
    }

    fn sample_target(&mut self, state: usize, kind: EventKind) -> Option<Target> {
        let edges = self.machine.state(state).transitions.get(&kind)?;
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for t in edges {
            acc += t.probability;
            if u < acc {
                return Some(t.target);
            }
        }
        None
    }

    fn sample_limit(&mut self, state: usize) -> Option<u64> {
        let d = self.machine.state(state).limit_dist?;
        let v = d.sample(&mut self.rng);
        Some(if v.is_finite() {
            v.round().max(1.0) as u64
        } else {
            u64::MAX
        })
    }

    fn sample_action(&mut self, state: usize) -> Option<DefenseAction> {
        let machine = Arc::clone(&self.machine);
        let spec = machine.state(state);
        let timeout = spec
            .timeout_dist
            .map_or(0, |d| micros(d.sample(&mut self.rng)));
        match spec.action {
            ActionKind::NoOp => Some(DefenseAction::Cancel),
            ActionKind::SendPadding => {
                let raw = spec.action_dist.map_or(0.0, |d| d.sample(&mut self.rng));
                Some(DefenseAction::SchedulePadding {
                    timeout,
                    bytes: padding_bytes(raw),
                    bypass: spec.bypass,
                    replace: spec.replace,
                })
            }
            ActionKind::BlockOutgoing => {
                let raw = spec.action_dist.map_or(0.0, |d| d.sample(&mut self.rng));
                let duration = if raw.is_infinite() && raw > 0.0 {
                    BlockDuration::Infinite
                } else {
                    BlockDuration::Finite(micros(raw))
                };
                Some(DefenseAction::ScheduleBlocking {
                    timeout,
                    duration,
                    bypass: spec.bypass,
                    replace: spec.replace,
                })
            }
        }
    }
}

fn micros(v: f64) -> u64 {
    if v.is_nan() || v <= 0.0 {
        0
    } else if v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v.round() as u64
    }
}

// Positive multiple of the cell size.
fn padding_bytes(raw: f64) -> u32 {
    let cells = if raw.is_finite() {
        (raw / CELL_SIZE as f64)
            .ceil()
            .max(1.0)
            .min(u16::MAX as f64) as u32
    } else {
        1
    };
    cells * CELL_SIZE
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::dist::DistributionSpec;
    use crate::framework::machine::StateSpec;

    fn ev(kind: EventKind) -> FrameworkEvent {
        FrameworkEvent::new(kind, 0)
    }

    fn pad_state() -> StateSpec {
        StateSpec::padding(
            DistributionSpec::uniform(512.0, 512.0),
            DistributionSpec::point(1000.0),
        )
    }

    // START -> PADDING(limit 3) -> NEXT(noop)
    fn limited() -> Arc<Machine> {
        Arc::new(
            Machine::new(
                vec![
                    StateSpec::noop().on(EventKind::NonPaddingSent, Target::State(1), 1.0),
                    pad_state()
                        .with_limit(DistributionSpec::point(3.0))
                        .on(EventKind::PaddingSent, Target::State(1), 1.0)
                        .on(EventKind::LimitReached, Target::State(2), 1.0),
                    StateSpec::noop().on(EventKind::NonPaddingRecv, Target::End, 1.0),
                ],
                0,
            )
            .unwrap(),
        )
    }

    #[test]
    fn entering_padding_state_schedules_padding() {
        let mut rt = MachineRuntime::with_seed(limited(), 1);
        let a = rt.transition(&ev(EventKind::NonPaddingSent));
        assert_eq!(
            a,
            Some(DefenseAction::SchedulePadding {
                timeout: 1000,
                bytes: 512,
                bypass: false,
                replace: false
            })
        );
        assert_eq!(rt.current_state(), Some(1));
    }

    #[test]
    fn third_self_transition_fires_limit_reached() {
        // Hand-enumerated: enter (action 1), PaddingSent #1 (action 2),
        // PaddingSent #2 (action 3), PaddingSent #3 -> LimitReached -> state 2.
        let mut rt = MachineRuntime::with_seed(limited(), 1);
        assert!(rt.transition(&ev(EventKind::NonPaddingSent)).is_some());
        for expected_count in 1..=2 {
            let a = rt.transition(&ev(EventKind::PaddingSent));
            assert!(matches!(a, Some(DefenseAction::SchedulePadding { .. })));
            assert_eq!(rt.self_transition_count(), expected_count);
            assert_eq!(rt.current_state(), Some(1));
        }
        let a = rt.transition(&ev(EventKind::PaddingSent));
        assert_eq!(a, Some(DefenseAction::Cancel));
        assert_eq!(rt.current_state(), Some(2));
        assert_eq!(rt.self_transition_count(), 0);
    }

    #[test]
    fn exhausted_limit_without_edge_stays_silent() {
        let m = Arc::new(
            Machine::new(
                vec![pad_state().with_limit(DistributionSpec::point(1.0)).on(
                    EventKind::PaddingSent,
                    Target::State(0),
                    1.0,
                )],
                0,
            )
            .unwrap(),
        );
        let mut rt = MachineRuntime::with_seed(m, 0);
        assert_eq!(rt.transition(&ev(EventKind::PaddingSent)), None);
        assert_eq!(rt.self_transition_count(), 1);
        assert_eq!(rt.transition(&ev(EventKind::PaddingSent)), None);
        assert_eq!(rt.self_transition_count(), 1);
    }

    #[test]
    fn terminated_machine_is_absorbing() {
        let mut rt = MachineRuntime::with_seed(limited(), 1);
        rt.transition(&ev(EventKind::NonPaddingSent));
        for _ in 0..3 {
            rt.transition(&ev(EventKind::PaddingSent));
        }
        assert_eq!(
            rt.transition(&ev(EventKind::NonPaddingRecv)),
            Some(DefenseAction::Cancel)
        );
        assert!(rt.is_terminated());
        for kind in EventKind::ALL {
            assert_eq!(rt.transition(&ev(kind)), None);
        }
    }

    #[test]
    fn unmapped_events_are_ignored() {
        let mut rt = MachineRuntime::with_seed(limited(), 1);
        assert_eq!(rt.transition(&ev(EventKind::PaddingRecv)), None);
        assert_eq!(rt.current_state(), Some(0));
    }

    #[test]
    fn infinite_blocking() {
        let m = Arc::new(
            Machine::new(
                vec![
                    StateSpec::noop().on(EventKind::NonPaddingSent, Target::State(1), 1.0),
                    StateSpec::blocking(
                        DistributionSpec::point(f64::INFINITY),
                        DistributionSpec::point(0.0),
                    )
                    .with_flags(true, true),
                ],
                0,
            )
            .unwrap(),
        );
        let mut rt = MachineRuntime::with_seed(m, 0);
        assert_eq!(
            rt.transition(&ev(EventKind::NonPaddingSent)),
            Some(DefenseAction::ScheduleBlocking {
                timeout: 0,
                duration: BlockDuration::Infinite,
                bypass: true,
                replace: true
            })
        );
    }

    #[test]
    fn padding_amount_rounds_up_to_cells() {
        assert_eq!(padding_bytes(512.0), 512);
        assert_eq!(padding_bytes(513.0), 1024);
        assert_eq!(padding_bytes(0.0), 512);
    }
}
