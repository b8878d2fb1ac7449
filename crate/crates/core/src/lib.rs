//! Deadline-aware multi-DNN scheduling on a time-division shared GPU,
//! driven entirely by offline latency/accuracy profiles.
//!
//! The crate is organized around a small pipeline:
//!
//! - [`profile`]: the offline latency/accuracy table `L(m, e, B)` that every
//!   scheduling decision consults, plus a calibrated synthetic generator.
//! - [`queueing`]: per-model FIFO queues, task lifecycle timestamps, and the
//!   system snapshot handed to policies.
//! - [`scheduler`]: the stability-score decision procedure (urgency
//!   activation, batch/exit selection, one-step queue prediction).
//! - [`policy`]: every baseline and ablated policy behind one interface.
//! - [`sim`]: a deterministic discrete-event engine with Poisson arrivals
//!   and profiled service times.
//! - [`metrics`]: P95 latency, SLO violation ratio, effective accuracy, and
//!   exit-depth statistics over a completed run.

pub mod metrics;
pub mod policy;
pub mod profile;
pub mod queueing;
pub mod rng;
pub mod scheduler;
pub mod sim;

pub use metrics::RunMetrics;
pub use policy::{PolicyAction, PolicyKind};
pub use profile::{CalibrationParams, ProfileTable};
pub use queueing::{FifoQueue, SystemState, Task, TaskId};
pub use scheduler::{Decision, PredictedState, SchedulerConfig};
pub use sim::{SimResult, WorkloadSpec};
