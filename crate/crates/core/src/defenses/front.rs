//! FRONT: reference transform plus single-chain and pipelined machines.
//!
//! The reference schedules `n ~ U{1..N}` padding cells at Rayleigh(w) times,
//! `w ~ U[W_min, W_max]`, on each endpoint. The machines approximate the
//! Rayleigh(W_max) sending rate with a chain of PADDING states, each one
//! covering a time slice `[t1, t2]` of the download.

use std::f64::consts::PI;

use rand::Rng;

use super::{finite_positive, invalid, DefenseError};
use crate::framework::dist::rayleigh_inverse_cdf;
use crate::framework::{DistributionSpec, EventKind, Machine, StateSpec, Target, CELL_SIZE};
use crate::trace::{Direction, Trace, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontParams {
    /// Padding budget in cells.
    pub n: u32,
    /// Window bounds in seconds.
    pub w_min: f64,
    pub w_max: f64,
    /// Number of PADDING states.
    pub psi: u32,
}

impl FrontParams {
    pub fn validate(&self) -> Result<(), DefenseError> {
        if self.psi == 0 {
            return Err(invalid("ψ", "must be at least 1"));
        }
        if self.n < self.psi {
            return Err(invalid(
                "N",
                format!("budget {} is smaller than ψ={}", self.n, self.psi),
            ));
        }
        finite_positive("W_min", self.w_min)?;
        finite_positive("W_max", self.w_max)?;
        if self.w_min > self.w_max {
            return Err(invalid(
                "W_min",
                format!("{} exceeds W_max={}", self.w_min, self.w_max),
            ));
        }
        Ok(())
    }

    /// Parameters for the reference transform only need `n` and the window.
    pub fn validate_reference(&self) -> Result<(), DefenseError> {
        if self.n == 0 {
            return Err(invalid("N", "must be at least 1"));
        }
        Self { psi: 1, ..*self }.validate()
    }
}

/// How the PADDING states split the download timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Slicing {
    /// `[0, W_max]` cut into equally long slices.
    #[default]
    EqualTime,
    /// `[0, 4 W_max]` cut into slices of equal Rayleigh(W_max) mass.
    EqualMass,
}

impl std::str::FromStr for Slicing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "equal-time" => Ok(Slicing::EqualTime),
            "equal-mass" => Ok(Slicing::EqualMass),
            other => Err(format!("unknown slicing {other:?}")),
        }
    }
}

/// Slice boundaries `t_0 = 0 < t_1 < ... < t_states` in seconds.
pub fn slice_bounds(w_max: f64, states: u32, slicing: Slicing) -> Vec<f64> {
    let k = states as f64;
    (0..=states)
        .map(|i| {
            let i = i as f64;
            match slicing {
                Slicing::EqualTime => w_max * i / k,
                Slicing::EqualMass => {
                    // CDF at 4 W_max is 1 - e^-8.
                    let mass = -(-8.0f64).exp_m1() * i / k;
                    w_max * (-2.0 * (-mass).ln_1p()).sqrt()
                }
            }
        })
        .collect()
}

/// Timeout mean and standard deviation in seconds for one PADDING state
/// spanning `[t1, t2]`, given a budget of `budget` cells over `states`
/// states.
pub fn padding_timeout(w_max: f64, budget: f64, states: u32, t1: f64, t2: f64) -> (f64, f64) {
    let per_state = budget / states as f64;
    let mu = (t2 - t1) / per_state;
    let sigma = w_max * w_max / PI.sqrt() / (per_state * (t1 + t2) / 2.0);
    (mu, sigma)
}

fn padding_state(mu_s: f64, sigma_s: f64, max_limit: u32) -> StateSpec {
    let mu = mu_s * 1e6;
    let sigma = sigma_s * 1e6;
    let cell = CELL_SIZE as f64;
    StateSpec::padding(
        DistributionSpec::uniform(cell, cell),
        DistributionSpec::normal(mu, sigma).clamped(Some(0.0), Some(2.0 * mu)),
    )
    .with_limit(DistributionSpec::uniform_int(1.0, max_limit as f64))
}

// Appends one chain of PADDING states and returns the index of its head.
fn push_chain(
    states: &mut Vec<StateSpec>,
    w_max: f64,
    budget: f64,
    count: u32,
    slicing: Slicing,
) -> Result<usize, DefenseError> {
    let max_limit = (budget / count as f64).floor();
    if max_limit < 1.0 {
        return Err(invalid(
            "N",
            format!("budget {budget} over {count} states leaves less than one cell per state"),
        ));
    }
    let bounds = slice_bounds(w_max, count, slicing);
    let head = states.len();
    for i in 0..count as usize {
        let (mu, sigma) = padding_timeout(w_max, budget, count, bounds[i], bounds[i + 1]);
        let me = head + i;
        let next = if i + 1 == count as usize {
            Target::End
        } else {
            Target::State(me + 1)
        };
        states.push(
            padding_state(mu, sigma, max_limit as u32)
                .on(EventKind::PaddingSent, Target::State(me), 1.0)
                .on(EventKind::LimitReached, next, 1.0),
        );
    }
    Ok(head)
}

/// START followed by ψ PADDING states ending in StateEnd.
pub fn gen_maybenot_front(p: &FrontParams, slicing: Slicing) -> Result<Machine, DefenseError> {
    p.validate()?;
    let mut states = vec![StateSpec::noop()];
    let head = push_chain(&mut states, p.w_max, p.n as f64, p.psi, slicing)?;
    states[0] = StateSpec::noop()
        .on(EventKind::NonPaddingSent, Target::State(head), 1.0)
        .on(EventKind::NonPaddingRecv, Target::State(head), 1.0);
    Ok(Machine::new(states, 0).expect("generated FRONT machine is well formed"))
}

/// Budgets of the pipelines, evenly spaced over `[N / pipelines, N]`.
pub fn pipeline_budgets(n: u32, pipelines: u32) -> Vec<f64> {
    let n = n as f64;
    let p = pipelines as f64;
    let lo = n / p;
    if pipelines == 1 {
        return vec![n];
    }
    (0..pipelines)
        .map(|k| lo + k as f64 * (n - lo) / (p - 1.0))
        .collect()
}

/// START fanning out uniformly to `pipelines` chains of `per_pipeline`
/// PADDING states with differing budgets. `p.psi` is ignored.
pub fn gen_pipelined_front(
    p: &FrontParams,
    pipelines: u32,
    per_pipeline: u32,
    slicing: Slicing,
) -> Result<Machine, DefenseError> {
    if pipelines < 2 {
        return Err(invalid("pipelines", "must be at least 2"));
    }
    if per_pipeline == 0 {
        return Err(invalid("ψ", "states per pipeline must be at least 1"));
    }
    let total = pipelines
        .checked_mul(per_pipeline)
        .ok_or_else(|| invalid("ψ", "pipelines × states overflows"))?;
    FrontParams { psi: total, ..*p }.validate()?;
    let mut states = vec![StateSpec::noop()];
    let mut start = StateSpec::noop();
    let share = 1.0 / pipelines as f64;
    for budget in pipeline_budgets(p.n, pipelines) {
        let head = push_chain(&mut states, p.w_max, budget, per_pipeline, slicing)?;
        start = start
            .on(EventKind::NonPaddingSent, Target::State(head), share)
            .on(EventKind::NonPaddingRecv, Target::State(head), share);
    }
    states[0] = start;
    Ok(Machine::new(states, 0).expect("generated pipelined FRONT machine is well formed"))
}

/// Samples `n` and `w` and returns the sorted padding times in seconds.
pub fn front_schedule<R: Rng + ?Sized>(p: &FrontParams, rng: &mut R) -> Vec<f64> {
    let n = rng.random_range(1..=p.n);
    let w = if p.w_min == p.w_max {
        p.w_min
    } else {
        rng.random_range(p.w_min..=p.w_max)
    };
    rayleigh_times(n as usize, w, rng)
}

/// `n` sorted Rayleigh(scale) samples.
pub fn rayleigh_times<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    let mut times: Vec<f64> = (0..n)
        .map(|_| rayleigh_inverse_cdf(scale, rng.random::<f64>()))
        .collect();
    times.sort_by(f64::total_cmp);
    times
}

/// Reference FRONT: adds both endpoints' padding schedules to the base trace,
/// dropping padding scheduled after the last base cell.
pub fn front_reference<R: Rng + ?Sized>(
    base: &Trace,
    client: &FrontParams,
    relay: &FrontParams,
    rng: &mut R,
) -> Result<Trace, DefenseError> {
    client.validate_reference()?;
    relay.validate_reference()?;
    let end = base.last_real_time().ok_or(DefenseError::EmptyBase)?;
    let mut events = base.events.clone();
    for (params, dir) in [(client, Direction::Outgoing), (relay, Direction::Incoming)] {
        events.extend(
            front_schedule(params, rng)
                .into_iter()
                .take_while(|&t| t <= end)
                .map(|t| TraceEvent::padding(t, dir)),
        );
    }
    Ok(Trace::new(base.id.clone(), events))
}
