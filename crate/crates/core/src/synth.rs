//! Synthetic inputs: web-like base traces and random machines.

use rand::Rng;

use crate::framework::{
    ActionKind, DistributionSpec, EventKind, Machine, StateSpec, Target, CELL_SIZE,
};
use crate::trace::{Direction, Trace, TraceEvent};

/// Shape of a synthetic page load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WebTraceParams {
    /// Request/response rounds, inclusive range.
    pub rounds: (u32, u32),
    /// Cells per request burst, inclusive range.
    pub request_cells: (u32, u32),
    /// Mean response cells per request cell.
    pub download_ratio: f64,
    /// Mean idle gap between rounds, seconds.
    pub mean_gap: f64,
    /// Server response delay, seconds.
    pub response_delay: (f64, f64),
    /// Spacing of cells within a burst, seconds.
    pub cell_gap: (f64, f64),
}

impl Default for WebTraceParams {
    fn default() -> Self {
        Self {
            rounds: (5, 30),
            request_cells: (1, 4),
            download_ratio: 15.0,
            mean_gap: 0.25,
            response_delay: (0.03, 0.15),
            cell_gap: (0.000_05, 0.001),
        }
    }
}

fn micro(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

/// A page load of request bursts each answered by a larger response burst.
/// Times are whole microseconds.
pub fn web_trace<R: Rng + ?Sized>(id: &str, p: &WebTraceParams, rng: &mut R) -> Trace {
    let rounds = rng.random_range(p.rounds.0..=p.rounds.1);
    let mut events = Vec::new();
    let mut t = 0.0;
    for _ in 0..rounds {
        let req = rng.random_range(p.request_cells.0..=p.request_cells.1);
        for _ in 0..req {
            events.push(TraceEvent::real(micro(t), Direction::Outgoing));
            t += rng.random_range(p.cell_gap.0..=p.cell_gap.1);
        }
        let mean = req as f64 * p.download_ratio;
        let resp = rng.random_range(mean * 0.5..=mean * 1.5).round().max(1.0) as u32;
        let mut r = t + rng.random_range(p.response_delay.0..=p.response_delay.1);
        for _ in 0..resp {
            events.push(TraceEvent::real(micro(r), Direction::Incoming));
            r += rng.random_range(p.cell_gap.0..=p.cell_gap.1);
        }
        let u: f64 = rng.random();
        t = r - p.mean_gap * (1.0 - u).ln();
    }
    Trace::new(id, events).normalized()
}

fn random_dist<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> DistributionSpec {
    let a = rng.random_range(0.0..scale);
    let b = a + rng.random_range(0.0..scale);
    let d = match rng.random_range(0..5) {
        0 => DistributionSpec::uniform(a, b),
        1 => DistributionSpec::uniform_int(a.floor(), b.floor()),
        2 => DistributionSpec::normal(a, b - a),
        3 => DistributionSpec::rayleigh(a + 1.0),
        _ => DistributionSpec::point(a),
    };
    if rng.random_bool(0.3) {
        d.clamped(Some(0.0), Some(scale))
    } else {
        d
    }
}

fn random_target<R: Rng + ?Sized>(rng: &mut R, states: usize) -> Target {
    if rng.random_bool(0.1) {
        Target::End
    } else {
        Target::State(rng.random_range(0..states))
    }
}

/// A valid machine with up to `max_states` states and random structure.
pub fn random_machine<R: Rng + ?Sized>(rng: &mut R, max_states: usize) -> Machine {
    let n = rng.random_range(1..=max_states.max(1));
    let cell = CELL_SIZE as f64;
    let states = (0..n)
        .map(|_| {
            let mut s = match rng.random_range(0..3) {
                0 => StateSpec::padding(
                    DistributionSpec::uniform(cell, rng.random_range(cell..4.0 * cell)),
                    random_dist(rng, 100_000.0),
                ),
                1 => {
                    let duration = if rng.random_bool(0.1) {
                        DistributionSpec::point(f64::INFINITY)
                    } else {
                        random_dist(rng, 100_000.0)
                    };
                    StateSpec::blocking(duration, random_dist(rng, 100_000.0))
                }
                _ => StateSpec::new(ActionKind::NoOp),
            };
            if rng.random_bool(0.6) {
                s = s.with_limit(random_dist(rng, 20.0));
            }
            s = s.with_flags(rng.random_bool(0.5), rng.random_bool(0.5));
            for kind in EventKind::ALL {
                if rng.random_bool(0.5) {
                    continue;
                }
                let k = rng.random_range(1..=3usize);
                let mut weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
                let sum: f64 = weights.iter().sum();
                // Either exactly one or some residual mass.
                let mass = if rng.random_bool(0.5) {
                    1.0
                } else {
                    rng.random_range(0.1..1.0)
                };
                weights.iter_mut().for_each(|w| *w *= mass / sum);
                let mut targets = Vec::new();
                for w in weights {
                    let t = random_target(rng, n);
                    if !targets.contains(&t) {
                        targets.push(t);
                        s = s.on(kind, t, w);
                    }
                }
            }
            s
        })
        .collect();
    Machine::new(states, rng.random_range(0..n)).expect("random machine is valid")
}

/// Random event kinds, useful to drive a runtime without a simulator.
pub fn random_events<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<EventKind> {
    (0..len)
        .map(|_| EventKind::ALL[rng.random_range(0..EventKind::ALL.len())])
        .collect()
}
