//! Traffic-shaping state machines for website-fingerprinting defenses.
//!
//! The crate has four layers:
//! - [`framework`]: machines, their text encoding, and a runtime.
//! - [`simulator`]: a deterministic client/relay simulation that applies
//!   machines to a base trace.
//! - [`defenses`]: machine generators and reference transforms for FRONT,
//!   RegulaTor, and Surakav.
//! - [`metrics`]: trace similarity and overhead measurements.

pub mod defenses;
pub mod framework;
pub mod metrics;
pub mod simulator;
pub mod synth;
pub mod trace;

pub use framework::{DistributionSpec, EventKind, Machine, MachineRuntime};
pub use simulator::{simulate, SimConfig, SimError};
pub use trace::{Direction, Trace, TraceEvent};
