//! Deterministic discrete-event simulation of the serving loop.
//!
//! Arrivals follow independent Poisson processes (one named PRNG stream
//! per model); the GPU is a single time-division resource whose service
//! times come straight from the profile table. Identical (seed, spec,
//! policy, table, config) inputs produce identical results, byte for byte.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::policy::{policy_decide, PolicyAction, PolicyError, PolicyKind};
use crate::profile::ProfileTable;
use crate::queueing::{QueueError, SystemState, Task};
use crate::rng::Xoshiro256PlusPlus;
use crate::scheduler::{Decision, SchedulerConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("workload spec invalid: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("simulation integrity fault: {0}")]
    IntegrityFault(String),
}

/// Workload description for one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    /// Poisson arrival rate per model, requests per second.
    pub rates_per_sec: Vec<f64>,
    pub duration_us: u64,
    /// Completed tasks excluded from metrics as warmup (global count).
    pub warmup: usize,
    pub seed: u64,
    /// Optional service-time noise: multiplies each batch's profiled
    /// latency by a seeded lognormal with this coefficient of variation.
    /// `None` keeps service deterministic.
    pub service_noise_cv: Option<f64>,
}

impl WorkloadSpec {
    pub fn validate(&self, model_count: usize) -> Result<(), SimError> {
        if self.rates_per_sec.len() != model_count {
            return Err(SimError::InvalidSpec(format!(
                "{} rates for {} models",
                self.rates_per_sec.len(),
                model_count
            )));
        }
        if self.rates_per_sec.iter().any(|&r| !(r > 0.0)) {
            return Err(SimError::InvalidSpec(
                "arrival rates must be positive".to_string(),
            ));
        }
        if self.duration_us == 0 {
            return Err(SimError::InvalidSpec("duration must be > 0".to_string()));
        }
        if let Some(cv) = self.service_noise_cv {
            if !(cv > 0.0) {
                return Err(SimError::InvalidSpec(
                    "service_noise_cv must be positive when set".to_string(),
                ));
            }
        }
        Ok(())
    }
}

/// One scheduling decision as taken at a concrete instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub at_us: u64,
    pub decision: Decision,
}

/// Everything a finished run produced: the completed-task trace (ordered
/// by completion time), the decision trace, the final clock, and the
/// count of tasks still queued when the run ended.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub completed: Vec<Task>,
    pub decisions: Vec<DecisionRecord>,
    pub final_clock_us: u64,
    pub backlog: usize,
}

/// Per-model Poisson arrival streams: i.i.d. exponential gaps via the
/// inverse CDF, one xoshiro stream per model derived from the master seed
/// by model index. Arrivals at or past the duration are dropped.
pub fn generate_arrivals(spec: &WorkloadSpec) -> Vec<Vec<u64>> {
    spec.rates_per_sec
        .iter()
        .enumerate()
        .map(|(model, &rate)| {
            let mut rng = Xoshiro256PlusPlus::stream(spec.seed, model as u64);
            let mut t_sec = 0.0f64;
            let mut out = Vec::new();
            loop {
                let u = rng.next_f64();
                // -ln(1 - u) is 0 when u = 0 and finite for u < 1.
                t_sec += -(1.0 - u).ln() / rate;
                let at_us = (t_sec * 1e6).round() as u64;
                if at_us >= spec.duration_us {
                    break;
                }
                out.push(at_us);
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    GpuComplete,
    Arrival(usize),
    PolicyTimer,
}

impl EventKind {
    // Tie order at equal timestamps: completions first, then arrivals,
    // then timers, so completion-triggered scheduling sees the queue state
    // excluding same-instant arrivals.
    fn priority(&self) -> u8 {
        match self {
            EventKind::GpuComplete => 0,
            EventKind::Arrival(_) => 1,
            EventKind::PolicyTimer => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    at_us: u64,
    kind: EventKind,
    seq: u64,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at_us, self.kind.priority(), self.seq).cmp(&(
            other.at_us,
            other.kind.priority(),
            other.seq,
        ))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

struct Engine {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl Engine {
    fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }

    fn push(&mut self, at_us: u64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { at_us, kind, seq }));
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }
}

/// Lognormal service-time multiplier with mean 1 and the given CV.
fn noise_factor(rng: &mut Xoshiro256PlusPlus, cv: f64) -> f64 {
    let sigma2 = (1.0 + cv * cv).ln();
    let mu = -sigma2 / 2.0;
    (mu + sigma2.sqrt() * rng.next_standard_normal()).exp()
}

/// Runs the full event loop: arrivals enqueue unconditionally; whenever
/// the GPU is idle and the clock is inside the run window, the policy is
/// invoked with zero scheduling overhead; a dispatch occupies the GPU for
/// exactly the profiled latency; completion immediately re-invokes the
/// policy. Tasks still queued at the end are reported as backlog.
pub fn run(
    spec: &WorkloadSpec,
    policy: PolicyKind,
    table: &ProfileTable,
    cfg: &SchedulerConfig,
) -> Result<SimResult, SimError> {
    spec.validate(table.model_count())?;
    cfg.validate()
        .map_err(|e| SimError::InvalidSpec(e.to_string()))?;

    let mut engine = Engine::new();
    for (model, stream) in generate_arrivals(spec).into_iter().enumerate() {
        for at_us in stream {
            engine.push(at_us, EventKind::Arrival(model));
        }
    }

    let mut state = SystemState::new(table.model_count());
    let mut in_flight: Option<Vec<Task>> = None;
    let mut completed: Vec<Task> = Vec::new();
    let mut decisions: Vec<DecisionRecord> = Vec::new();
    // Service-noise stream id sits far above any model index.
    let mut noise_rng = spec
        .service_noise_cv
        .map(|_| Xoshiro256PlusPlus::stream(spec.seed, u64::MAX));
    let mut final_clock = 0u64;

    while let Some(event) = engine.pop() {
        state.now_us = event.at_us;
        final_clock = final_clock.max(event.at_us);
        match event.kind {
            EventKind::Arrival(model) => {
                state.enqueue(model, event.at_us)?;
            }
            EventKind::GpuComplete => {
                let batch = in_flight.take().ok_or_else(|| {
                    SimError::IntegrityFault("gpu completion with nothing in flight".into())
                })?;
                completed.extend(batch);
            }
            EventKind::PolicyTimer => {}
        }

        // Scheduling happens only while the GPU is idle and the clock is
        // inside the run window; the in-flight batch, if any, still drains.
        if in_flight.is_some() || state.now_us >= spec.duration_us {
            continue;
        }
        if state.queues().iter().all(|q| q.is_empty()) {
            continue;
        }
        match policy_decide(policy, &state, table, cfg)? {
            PolicyAction::Dispatch(decision) => {
                let have = state.queue(decision.model)?.len();
                if decision.batch == 0 || decision.batch > have {
                    return Err(SimError::IntegrityFault(format!(
                        "policy {} dispatched batch {} from queue {} of length {}",
                        policy, decision.batch, decision.model, have
                    )));
                }
                let service_us = match (&mut noise_rng, spec.service_noise_cv) {
                    (Some(rng), Some(cv)) => {
                        ((decision.latency_us as f64 * noise_factor(rng, cv)).round() as u64).max(1)
                    }
                    _ => decision.latency_us,
                };
                let complete_at = state.now_us + service_us;
                let mut batch = state.dequeue_batch(decision.model, decision.batch)?;
                for task in &mut batch {
                    task.dispatch_us = Some(state.now_us);
                    task.complete_us = Some(complete_at);
                    task.exit = Some(decision.exit);
                }
                state.gpu_busy_until_us = complete_at;
                in_flight = Some(batch);
                engine.push(complete_at, EventKind::GpuComplete);
                decisions.push(DecisionRecord {
                    at_us: state.now_us,
                    decision,
                });
            }
            PolicyAction::WaitUntil(at_us) => {
                if at_us <= state.now_us {
                    return Err(SimError::IntegrityFault(format!(
                        "policy {policy} deferred to {at_us} at time {}",
                        state.now_us
                    )));
                }
                engine.push(at_us, EventKind::PolicyTimer);
            }
            PolicyAction::NoWork => {
                return Err(SimError::IntegrityFault(
                    "policy reported no work with non-empty queues".into(),
                ));
            }
        }
    }

    let backlog = state.queues().iter().map(|q| q.len()).sum();
    Ok(SimResult {
        completed,
        decisions,
        final_clock_us: final_clock,
        backlog,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{generate_synthetic_profile, CalibrationParams, ModelProfile, ProfileTable};

    fn cfg() -> SchedulerConfig {
        SchedulerConfig::new(50_000, 10.0, 10).unwrap()
    }

    fn table() -> ProfileTable {
        generate_synthetic_profile(7, &CalibrationParams::default()).unwrap()
    }

    fn spec(rates: Vec<f64>, duration_us: u64, seed: u64) -> WorkloadSpec {
        WorkloadSpec {
            rates_per_sec: rates,
            duration_us,
            warmup: 0,
            seed,
            service_noise_cv: None,
        }
    }

    #[test]
    fn arrivals_are_deterministic_and_nonnegative_gaps() {
        let s = spec(vec![100.0, 50.0, 20.0], 5_000_000, 42);
        let a = generate_arrivals(&s);
        let b = generate_arrivals(&s);
        assert_eq!(a, b);
        for stream in &a {
            for w in stream.windows(2) {
                assert!(w[0] <= w[1]);
            }
            assert!(stream.iter().all(|&t| t < s.duration_us));
        }
        let other = generate_arrivals(&spec(vec![100.0, 50.0, 20.0], 5_000_000, 43));
        assert_ne!(a, other);
    }

    // Moment oracle: empirical count within 4 standard deviations of
    // lambda * D, and mean gap near 1/lambda.
    #[test]
    fn arrival_counts_match_poisson_moments() {
        for seed in [1u64, 2, 3, 4, 5] {
            let lambda = 200.0;
            let d_sec = 20.0;
            let s = spec(vec![lambda], (d_sec * 1e6) as u64, seed);
            let stream = &generate_arrivals(&s)[0];
            let expected = lambda * d_sec;
            let dev = (stream.len() as f64 - expected).abs();
            assert!(
                dev <= 4.0 * expected.sqrt(),
                "seed {seed}: count {} vs expected {expected}",
                stream.len()
            );
            let mean_gap_us = stream.last().copied().unwrap() as f64 / stream.len() as f64;
            let expect_gap = 1e6 / lambda;
            assert!((mean_gap_us - expect_gap).abs() / expect_gap < 0.1);
        }
    }

    // One model, one arrival at t=0, deterministic service: the task
    // completes exactly L later and T = w + t decomposes with w = 0.
    #[test]
    fn single_task_completes_at_profiled_latency() {
        let cells = 28_000u64;
        let t = ProfileTable {
            platform: "test".into(),
            statistic: "p95".into(),
            b_max: 10,
            models: vec![ModelProfile {
                id: 0,
                name: "m".into(),
                exits: vec!["final".into()],
                accuracy_pct: vec![70.0],
                latency_us: vec![vec![cells; 10]],
            }],
        };
        let s = spec(vec![100_000.0], 50, 9);
        let result = run(&s, PolicyKind::AllFinal, &t, &cfg()).unwrap();
        assert!(!result.completed.is_empty());
        // The first completed task was dispatched the instant it arrived
        // (idle GPU), so its wait is zero and T equals the profiled L.
        let first = &result.completed[0];
        assert_eq!(first.dispatch_us.unwrap(), first.arrival_us);
        assert_eq!(first.complete_us.unwrap() - first.dispatch_us.unwrap(), cells);
        assert_eq!(
            first.total_latency_us().unwrap(),
            first.wait_us().unwrap() + cells
        );
    }

    #[test]
    fn gpu_busy_intervals_never_overlap() {
        let t = table();
        let s = spec(vec![300.0, 200.0, 100.0], 3_000_000, 11);
        for kind in [
            PolicyKind::EdgeServing,
            PolicyKind::AllFinal,
            PolicyKind::EeEdf,
            PolicyKind::DeferredBatching,
        ] {
            let result = run(&s, kind, &t, &cfg()).unwrap();
            let mut intervals: Vec<(u64, u64)> = result
                .decisions
                .iter()
                .map(|r| (r.at_us, r.at_us + r.decision.latency_us))
                .collect();
            intervals.sort_unstable();
            for w in intervals.windows(2) {
                assert!(w[0].1 <= w[1].0, "{kind}: overlap {w:?}");
            }
            for task in &result.completed {
                assert!(task.dispatch_us.unwrap() >= task.arrival_us);
                assert!(task.complete_us.unwrap() <= result.final_clock_us);
            }
        }
    }

    #[test]
    fn two_queues_time_division_is_serial() {
        // Under saturation both queues always hold work, so each batch
        // must start exactly when the previous one completes: the GPU
        // processes one batch at a time with no overlap and no idle gap.
        let t = table();
        let s = spec(vec![2_000.0, 2_000.0, 2_000.0], 500_000, 5);
        let result = run(&s, PolicyKind::AllFinal, &t, &cfg()).unwrap();
        assert!(result.decisions.len() > 10);
        for pair in result.decisions[5..].windows(2) {
            assert_eq!(
                pair[1].at_us,
                pair[0].at_us + pair[0].decision.latency_us
            );
        }
    }

    #[test]
    fn replay_is_identical() {
        let t = table();
        let s = spec(vec![300.0, 200.0, 100.0], 2_000_000, 77);
        let a = run(&s, PolicyKind::EdgeServing, &t, &cfg()).unwrap();
        let b = run(&s, PolicyKind::EdgeServing, &t, &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn work_conservation_for_non_deferring_policies() {
        let t = table();
        let s = spec(vec![200.0, 150.0, 80.0], 2_000_000, 21);
        let result = run(&s, PolicyKind::EdgeServing, &t, &cfg()).unwrap();
        // Every task dispatched after its arrival was either served by a
        // batch that started no later than any idle moment; equivalently,
        // whenever a decision fires the GPU was idle and some queue
        // non-empty. Check the decision train for forbidden idle gaps: a
        // gap between consecutive busy intervals must contain no pending
        // task, i.e. no completed task can have been waiting across it.
        let mut busy: Vec<(u64, u64)> = result
            .decisions
            .iter()
            .map(|r| (r.at_us, r.at_us + r.decision.latency_us))
            .collect();
        busy.sort_unstable();
        for w in busy.windows(2) {
            let (gap_start, gap_end) = (w[0].1, w[1].0);
            if gap_start >= gap_end {
                continue;
            }
            for task in &result.completed {
                let waiting_through_gap =
                    task.arrival_us < gap_start && task.dispatch_us.unwrap() >= gap_end;
                assert!(!waiting_through_gap, "idle gap with pending work");
            }
        }
    }

    // Fluid-limit oracle: a saturated single queue grows its backlog at
    // roughly (lambda - B_max / L) * D.
    #[test]
    fn saturated_queue_backlog_matches_fluid_limit() {
        let base = table();
        let mut solo = base.models[2].clone();
        solo.id = 0;
        let t = ProfileTable {
            models: vec![solo],
            ..base
        };
        let final_exit = 3;
        let l_b10 = t.lookup_latency(0, final_exit, 10).unwrap() as f64 / 1e6;
        let service_rate = 10.0 / l_b10;
        let lambda = 2.0 * service_rate;
        let d_sec = 20.0;
        let s = spec(vec![lambda], (d_sec * 1e6) as u64, 31);
        let result = run(&s, PolicyKind::AllFinal, &t, &cfg()).unwrap();
        let predicted = (lambda - service_rate) * d_sec;
        let got = result.backlog as f64;
        assert!(
            (got - predicted).abs() / predicted < 0.2,
            "backlog {got} vs fluid prediction {predicted}"
        );
    }

    #[test]
    fn noise_knob_changes_service_but_keeps_determinism() {
        let t = table();
        let mut s = spec(vec![100.0, 80.0, 40.0], 1_000_000, 13);
        let clean = run(&s, PolicyKind::EdgeServing, &t, &cfg()).unwrap();
        s.service_noise_cv = Some(0.05);
        let noisy1 = run(&s, PolicyKind::EdgeServing, &t, &cfg()).unwrap();
        let noisy2 = run(&s, PolicyKind::EdgeServing, &t, &cfg()).unwrap();
        assert_eq!(noisy1, noisy2);
        assert_ne!(clean, noisy1);
    }
}
