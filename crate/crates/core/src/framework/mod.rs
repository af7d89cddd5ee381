//! Event-driven padding machines: distributions, states, serialization, and
//! the per-machine runtime.

pub mod dist;
pub mod event;
pub mod machine;
pub mod runtime;

pub use dist::{DistributionSpec, Family, ParamError};
pub use event::{EventKind, FrameworkEvent, CELL_SIZE};
pub use machine::{ActionKind, Machine, MachineError, ParseError, StateSpec, Target, Transition};
pub use runtime::{seeded_rng, BlockDuration, DefenseAction, MachineRuntime};
