//! RegulaTor: reference transform and the relay/client machine pair.
//!
//! The relay sends at a decaying surge rate `R * D^(t - surge)` and restarts
//! the surge when its queue grows past `T * rate`. The client sends one cell
//! for every `U` cells it receives.

use std::collections::VecDeque;

use rand::Rng;

use super::{finite_positive, invalid, DefenseError};
use crate::framework::{DistributionSpec, EventKind, Machine, StateSpec, Target, CELL_SIZE};
use crate::trace::{Direction, Trace, TraceEvent};

/// Cells the relay sends before its decay schedule starts.
pub const BOOT_CELLS: usize = 10;
/// Timeout of the BOOT padding states, µs.
pub const BOOT_TIMEOUT_US: f64 = 100_000.0;
/// Cap on SEND states when the decay never drops the rate below 1 cell/s.
pub const MAX_SEND_STATES: u32 = 10_000;

/// Index of SEND_0 in the relay machine.
pub const SEND_0: usize = 2 + BOOT_CELLS - 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulatorParams {
    /// Initial surge rate, cells per second.
    pub r: f64,
    /// Per-second decay factor in (0, 1].
    pub d: f64,
    /// Surge restart threshold multiplier.
    pub t: f64,
    /// Relay padding budget (reference only).
    pub n: u32,
    /// Cells received per cell sent by the client.
    pub u: f64,
    /// Longest a client cell may wait, seconds (reference only).
    pub c: f64,
    /// Cells per SEND state (machine only).
    pub omega: u32,
    /// Explicit SEND state count instead of running down to 1 cell/s.
    pub send_states: Option<u32>,
}

impl RegulatorParams {
    fn validate_common(&self) -> Result<(), DefenseError> {
        finite_positive("R", self.r)?;
        if !(self.d > 0.0 && self.d <= 1.0) {
            return Err(invalid("D", format!("must lie in (0, 1], got {}", self.d)));
        }
        finite_positive("T", self.t)?;
        if !(self.u.is_finite() && self.u >= 1.0) {
            return Err(invalid("U", format!("must be >= 1, got {}", self.u)));
        }
        Ok(())
    }

    pub fn validate_machine(&self) -> Result<(), DefenseError> {
        self.validate_common()?;
        if self.omega == 0 {
            return Err(invalid("ω", "must be at least 1"));
        }
        if self.send_states == Some(0) {
            return Err(invalid("K", "must be at least 1"));
        }
        Ok(())
    }

    pub fn validate_reference(&self) -> Result<(), DefenseError> {
        self.validate_common()?;
        finite_positive("C", self.c)
    }
}

/// Rates of the SEND states: `rate_i = R * D^(t_i)` with
/// `t_{i+1} = t_i + ω / rate_i`.
pub fn send_rates(p: &RegulatorParams) -> Vec<f64> {
    let mut rates = Vec::new();
    let mut t = 0.0;
    let cap = p.send_states.unwrap_or(MAX_SEND_STATES);
    while (rates.len() as u32) < cap {
        let rate = p.r * p.d.powf(t);
        if p.send_states.is_none() && rate < 1.0 && !rates.is_empty() {
            break;
        }
        rates.push(rate);
        t += p.omega as f64 / rate;
    }
    rates
}

fn cell_amount() -> DistributionSpec {
    let cell = CELL_SIZE as f64;
    DistributionSpec::uniform(cell, cell)
}

fn infinite_block() -> StateSpec {
    StateSpec::blocking(
        DistributionSpec::point(f64::INFINITY),
        DistributionSpec::point(0.0),
    )
    .with_flags(true, true)
}

/// START, BLOCK, nine BOOT states, then one SEND state per rate step.
pub fn gen_regulator_relay(p: &RegulatorParams) -> Result<Machine, DefenseError> {
    p.validate_machine()?;
    let rates = send_rates(p);
    let mut states = Vec::with_capacity(SEND_0 + rates.len());
    states.push(StateSpec::noop().on(EventKind::NonPaddingSent, Target::State(1), 1.0));
    states.push(infinite_block().on(EventKind::BlockingBegin, Target::State(2), 1.0));
    for i in 2..SEND_0 {
        states.push(
            StateSpec::padding(cell_amount(), DistributionSpec::point(BOOT_TIMEOUT_US))
                .with_flags(true, true)
                .on(EventKind::PaddingSent, Target::State(i), 1.0)
                .on(EventKind::NonPaddingSent, Target::State(i + 1), 1.0),
        );
    }
    for (i, &rate) in rates.iter().enumerate() {
        let me = SEND_0 + i;
        let next = if i + 1 == rates.len() {
            Target::End
        } else {
            Target::State(me + 1)
        };
        let mut s = StateSpec::padding(cell_amount(), DistributionSpec::point(1e6 / rate))
            .with_flags(true, true)
            .with_limit(DistributionSpec::point(p.omega as f64))
            .on(EventKind::PaddingSent, Target::State(me), 1.0)
            .on(EventKind::LimitReached, next, 1.0);
        if i > 0 {
            let restart = (2.0 / (p.t * rate)).min(1.0);
            s = s.on(EventKind::NonPaddingSent, Target::State(SEND_0), restart);
        }
        states.push(s);
    }
    Ok(Machine::new(states, 0).expect("generated relay machine is well formed"))
}

/// `floor(U)` COUNT states followed by SEND.
pub fn gen_regulator_client(u: f64) -> Result<Machine, DefenseError> {
    if !(u.is_finite() && u >= 1.0) {
        return Err(invalid("U", format!("must be >= 1, got {u}")));
    }
    let counts = u.floor() as usize;
    let frac = u - u.floor();
    let send = counts;
    let mut states = Vec::with_capacity(counts + 1);
    for i in 0..counts {
        let mut s = infinite_block();
        let last = i + 1 == counts;
        if last && frac > 0.0 {
            // The limit of 2 caps the extra cell at one.
            s = s.with_limit(DistributionSpec::point(2.0)).on(
                EventKind::LimitReached,
                Target::State(send),
                1.0,
            );
            for ev in [EventKind::PaddingRecv, EventKind::NonPaddingRecv] {
                s = s
                    .on(ev, Target::State(send), 1.0 - frac)
                    .on(ev, Target::State(i), frac);
            }
        } else {
            let next = if last { send } else { i + 1 };
            for ev in [EventKind::PaddingRecv, EventKind::NonPaddingRecv] {
                s = s.on(ev, Target::State(next), 1.0);
            }
        }
        states.push(s);
    }
    states.push(
        StateSpec::padding(cell_amount(), DistributionSpec::point(0.0))
            .with_flags(true, true)
            .on(EventKind::PaddingSent, Target::State(0), 1.0),
    );
    Ok(Machine::new(states, 0).expect("generated client machine is well formed"))
}

/// Reference RegulaTor applied to a base trace on a single time axis.
pub fn regulator_reference<R: Rng + ?Sized>(
    base: &Trace,
    p: &RegulatorParams,
    rng: &mut R,
) -> Result<Trace, DefenseError> {
    p.validate_reference()?;
    if base.last_real_time().is_none() {
        return Err(DefenseError::EmptyBase);
    }
    let incoming: Vec<f64> = base
        .real_events()
        .filter(|e| e.direction == Direction::Incoming)
        .map(|e| e.time)
        .collect();
    let outgoing: Vec<f64> = base
        .real_events()
        .filter(|e| e.direction == Direction::Outgoing)
        .map(|e| e.time)
        .collect();
    let budget = rng.random_range(0..=p.n);
    let relay = relay_schedule(&incoming, p, budget);
    let mut events: Vec<TraceEvent> = relay
        .iter()
        .map(|&(t, pad)| TraceEvent::new(t, Direction::Incoming, pad))
        .collect();
    let received: Vec<f64> = relay.iter().map(|&(t, _)| t).collect();
    events.extend(
        client_schedule(&outgoing, &received, p.u, p.c)
            .into_iter()
            .map(|(t, pad)| TraceEvent::new(t, Direction::Outgoing, pad)),
    );
    Ok(Trace::new(base.id.clone(), events))
}

/// Relay sending times with padding flags. `arrivals` must be sorted.
pub fn relay_schedule(arrivals: &[f64], p: &RegulatorParams, budget: u32) -> Vec<(f64, bool)> {
    let mut out = Vec::with_capacity(arrivals.len() + budget as usize);
    if arrivals.is_empty() {
        return out;
    }
    let surge_idx = BOOT_CELLS.min(arrivals.len()) - 1;
    let mut surge = arrivals[surge_idx];
    let mut now = surge;
    let mut next = 0;
    let mut queue: VecDeque<f64> = VecDeque::new();
    let mut budget = budget;
    while next < arrivals.len() || !queue.is_empty() {
        while next < arrivals.len() && arrivals[next] <= now {
            queue.push_back(arrivals[next]);
            next += 1;
        }
        let rate = p.r * p.d.powf(now - surge);
        if queue.len() as f64 > p.t * rate {
            surge = now;
        }
        let rate = p.r * p.d.powf(now - surge);
        let gap = 1.0 / rate;
        if queue.pop_front().is_some() {
            out.push((now, false));
            now += gap;
        } else if budget > 0 {
            budget -= 1;
            out.push((now, true));
            now += gap;
        } else if next < arrivals.len() {
            // Idle: wake at the next arrival if it comes before the next tick.
            now = (now + gap).min(arrivals[next]);
        }
    }
    out
}

/// Client sending times: one cell per `u` received, real cells never wait
/// longer than `c` seconds.
pub fn client_schedule(outgoing: &[f64], received: &[f64], u: f64, c: f64) -> Vec<(f64, bool)> {
    let mut out = Vec::with_capacity(outgoing.len() + (received.len() as f64 / u) as usize + 1);
    let mut pending = 0;
    let mut credit = 0.0;
    // Sends cells that hit the wait limit before `until`.
    let flush = |pending: &mut usize, out: &mut Vec<(f64, bool)>, until: f64| {
        while *pending < outgoing.len() && outgoing[*pending] + c < until {
            out.push((outgoing[*pending] + c, false));
            *pending += 1;
        }
    };
    for &r in received {
        flush(&mut pending, &mut out, r);
        credit += 1.0;
        if credit + 1e-9 >= u {
            credit -= u;
            if pending < outgoing.len() && outgoing[pending] <= r {
                pending += 1;
                out.push((r, false));
            } else {
                out.push((r, true));
            }
        }
    }
    flush(&mut pending, &mut out, f64::INFINITY);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::{ActionKind, Family};

    pub(crate) fn light() -> RegulatorParams {
        RegulatorParams {
            r: 324.0,
            d: 0.86,
            t: 3.75,
            n: 1650,
            u: 4.02,
            c: 2.08,
            omega: 20,
            send_states: None,
        }
    }

    #[test]
    fn relay_state_count_and_first_send_timeout() {
        let p = light();
        let m = gen_regulator_relay(&p).unwrap();
        let k = send_rates(&p).len();
        assert_eq!(m.len(), 11 + k);
        let t = m.state(SEND_0).timeout_dist.unwrap();
        let Family::PointMass(us) = t.family else {
            panic!()
        };
        assert!((us - 3086.42).abs() < 0.01, "{us}");
        assert!(!m
            .state(SEND_0)
            .transitions
            .contains_key(&EventKind::NonPaddingSent));
        let restart = &m.state(SEND_0 + 1).transitions[&EventKind::NonPaddingSent];
        assert_eq!(restart[0].target, Target::State(SEND_0));
        let last = m.len() - 1;
        assert_eq!(
            m.state(last).transitions[&EventKind::LimitReached][0].target,
            Target::End
        );
    }

    #[test]
    fn rates_decay_to_one_cell_per_second() {
        let rates = send_rates(&light());
        assert_eq!(rates[0], 324.0);
        assert!(rates.windows(2).all(|w| w[1] < w[0]));
        assert!(*rates.last().unwrap() >= 1.0);
        let fixed = send_rates(&RegulatorParams {
            send_states: Some(5),
            ..light()
        });
        assert_eq!(fixed.len(), 5);
    }

    #[test]
    fn client_topology() {
        let m = gen_regulator_client(3.0).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.state(3).action, ActionKind::SendPadding);
        assert_eq!(
            m.state(2).transitions[&EventKind::NonPaddingRecv][0].target,
            Target::State(3)
        );

        let m = gen_regulator_client(3.95).unwrap();
        let edges = &m.state(2).transitions[&EventKind::PaddingRecv];
        let p: Vec<_> = edges.iter().map(|t| (t.target, t.probability)).collect();
        assert_eq!(p.len(), 2);
        assert!(p.contains(&(Target::State(3), 0.05)));
        assert!(p.contains(&(Target::State(2), 0.95)));
        assert!(gen_regulator_client(0.5).is_err());
    }

    #[test]
    fn idle_relay_sends_nothing() {
        // Budget 0 and no queue after the single cell: exactly one emission.
        let p = light();
        let out = relay_schedule(&[0.0], &p, 0);
        assert_eq!(out, vec![(0.0, false)]);
    }

    #[test]
    fn relay_waits_for_ten_cells() {
        let arrivals: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let out = relay_schedule(&arrivals, &light(), 0);
        assert_eq!(out.len(), 12);
        assert!((out[0].0 - 0.9).abs() < 1e-12);
        assert!(out.iter().all(|&(_, pad)| !pad));
    }

    #[test]
    fn client_ratio_and_wait_cap() {
        let received: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let out = client_schedule(&[], &received, 4.0, 1.0);
        assert_eq!(out, vec![(3.0, true), (7.0, true)]);
        // A lonely real cell is flushed after c seconds.
        let out = client_schedule(&[0.5], &[10.0], 4.0, 1.0);
        assert_eq!(out, vec![(1.5, false)]);
    }
}
