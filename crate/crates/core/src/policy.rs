//! Baseline and ablated scheduling policies behind one interface.
//!
//! The simulator only ever sees [`policy_decide`]; every evaluated policy
//! variant (the full scheduler, longest-queue-first, earliest-deadline-
//! first, fixed-exit and fixed-batch ablations, deferred batching) is a
//! kind tag here.

use std::str::FromStr;

use thiserror::Error;

use crate::profile::ProfileTable;
use crate::queueing::SystemState;
use crate::scheduler::{
    decide, decide_with, evaluate_candidate, select_exit, Decision, SchedError, SchedulerConfig,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("unknown policy name {0:?}")]
    UnknownPolicy(String),
}

/// Scheduling policy selector. String names (for config/CLI) are given by
/// [`PolicyKind::name`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    /// Full stability-score scheduler.
    EdgeServing,
    /// Longest queue first, always the deepest exit.
    AllFinal,
    /// Longest queue first, always the shallowest exit.
    AllEarly,
    /// Longest queue first with adaptive batch/exit selection.
    EeLqf,
    /// Least remaining SLO slack first with adaptive batch/exit selection.
    EeEdf,
    /// Stability-score model selection with the exit forced to final.
    AllFinalDeadlineAware,
    /// Full scheduler with batch size fixed to 1.
    OursBatchSize1,
    /// Deferred batching: delay each queue's dispatch until its oldest
    /// request approaches the deadline, then serve at the final exit.
    DeferredBatching,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::EdgeServing,
        PolicyKind::AllFinal,
        PolicyKind::AllEarly,
        PolicyKind::EeLqf,
        PolicyKind::EeEdf,
        PolicyKind::AllFinalDeadlineAware,
        PolicyKind::OursBatchSize1,
        PolicyKind::DeferredBatching,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::EdgeServing => "edgeserving",
            PolicyKind::AllFinal => "all_final",
            PolicyKind::AllEarly => "all_early",
            PolicyKind::EeLqf => "ee_lqf",
            PolicyKind::EeEdf => "ee_edf",
            PolicyKind::AllFinalDeadlineAware => "allfinal_da",
            PolicyKind::OursBatchSize1 => "ours_bs1",
            PolicyKind::DeferredBatching => "deferred_batching",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| PolicyError::UnknownPolicy(s.to_string()))
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of one policy invocation.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyAction {
    Dispatch(Decision),
    /// Nothing should be dispatched before this instant; re-evaluate then
    /// (or on any earlier arrival). Always strictly after the current time.
    WaitUntil(u64),
    /// Every queue is empty.
    NoWork,
}

/// Longest queue, ties toward the lowest model index.
fn longest_queue(state: &SystemState) -> Option<usize> {
    state
        .queues()
        .iter()
        .filter(|q| !q.is_empty())
        .max_by(|a, b| a.len().cmp(&b.len()).then(b.model.cmp(&a.model)))
        .map(|q| q.model)
}

/// Queue whose oldest task has the least remaining slack tau - w, i.e. the
/// largest head wait. Ties toward the lowest model index.
fn least_slack_queue(state: &SystemState) -> Option<usize> {
    state
        .queues()
        .iter()
        .filter(|q| !q.is_empty())
        .min_by(|a, b| {
            let wa = a.front().expect("non-empty").arrival_us;
            let wb = b.front().expect("non-empty").arrival_us;
            // Earlier arrival = larger wait = less slack.
            wa.cmp(&wb).then(a.model.cmp(&b.model))
        })
        .map(|q| q.model)
}

fn fixed_exit_decision(
    state: &SystemState,
    model: usize,
    deepest: bool,
    table: &ProfileTable,
    cfg: &SchedulerConfig,
) -> Result<Decision, SchedError> {
    let q = state.queue(model).map_err(|e| SchedError::InvalidConfig(e.to_string()))?;
    let batch = q.len().min(cfg.b_max);
    let exit = if deepest {
        table.model(model)?.exit_count() - 1
    } else {
        0
    };
    let latency_us = table.lookup_latency(model, exit, batch)?;
    let w_max = state.now_us - q.front().expect("non-empty").arrival_us;
    Ok(Decision {
        model,
        exit,
        batch,
        latency_us,
        score: None,
        feasible: w_max.saturating_add(latency_us) <= cfg.slo_us,
    })
}

fn ee_heuristic_decision(
    state: &SystemState,
    model: usize,
    table: &ProfileTable,
    cfg: &SchedulerConfig,
) -> Result<Decision, SchedError> {
    let q = state.queue(model).map_err(|e| SchedError::InvalidConfig(e.to_string()))?;
    let batch = q.len().min(cfg.b_max);
    let w_max = state.now_us - q.front().expect("non-empty").arrival_us;
    let (exit, feasible) = select_exit(table, model, batch, w_max, cfg)?;
    let latency_us = table.lookup_latency(model, exit, batch)?;
    Ok(Decision {
        model,
        exit,
        batch,
        latency_us,
        score: None,
        feasible,
    })
}

fn deferred_batching(
    state: &SystemState,
    table: &ProfileTable,
    cfg: &SchedulerConfig,
) -> Result<PolicyAction, SchedError> {
    // Per queue: the latest instant at which the oldest task still meets
    // tau at the final exit with the batch it would have then. A queue at
    // B_max has nothing to gain from waiting and triggers immediately.
    let mut best: Option<(u64, usize)> = None;
    for q in state.queues() {
        if q.is_empty() {
            continue;
        }
        let batch = q.len().min(cfg.b_max);
        let final_exit = table.model(q.model)?.exit_count() - 1;
        let latency = table.lookup_latency(q.model, final_exit, batch)?;
        let oldest_arrival = q.front().expect("non-empty").arrival_us;
        // Latest dispatch instant solving (t - arrival) + L <= tau; a
        // trigger in the past means the head can no longer be deferred.
        let trigger = if q.len() >= cfg.b_max {
            state.now_us
        } else {
            oldest_arrival.saturating_add(cfg.slo_us.saturating_sub(latency))
        };
        let better = match best {
            None => true,
            Some((t, _)) => trigger < t,
        };
        if better {
            best = Some((trigger, q.model));
        }
    }
    let Some((trigger, model)) = best else {
        return Ok(PolicyAction::NoWork);
    };
    if trigger <= state.now_us {
        let d = fixed_exit_decision(state, model, true, table, cfg)?;
        Ok(PolicyAction::Dispatch(d))
    } else {
        Ok(PolicyAction::WaitUntil(trigger))
    }
}

/// Evaluates `kind` against the current system snapshot.
pub fn policy_decide(
    kind: PolicyKind,
    state: &SystemState,
    table: &ProfileTable,
    cfg: &SchedulerConfig,
) -> Result<PolicyAction, PolicyError> {
    let action = match kind {
        PolicyKind::EdgeServing => match decide(state, table, cfg)? {
            Some(d) => PolicyAction::Dispatch(d),
            None => PolicyAction::NoWork,
        },
        PolicyKind::AllFinal | PolicyKind::AllEarly => match longest_queue(state) {
            Some(m) => PolicyAction::Dispatch(fixed_exit_decision(
                state,
                m,
                kind == PolicyKind::AllFinal,
                table,
                cfg,
            )?),
            None => PolicyAction::NoWork,
        },
        PolicyKind::EeLqf => match longest_queue(state) {
            Some(m) => PolicyAction::Dispatch(ee_heuristic_decision(state, m, table, cfg)?),
            None => PolicyAction::NoWork,
        },
        PolicyKind::EeEdf => match least_slack_queue(state) {
            Some(m) => PolicyAction::Dispatch(ee_heuristic_decision(state, m, table, cfg)?),
            None => PolicyAction::NoWork,
        },
        PolicyKind::AllFinalDeadlineAware => {
            // Force every candidate to its own final exit. Exit counts can
            // differ per model, so the override is resolved per candidate.
            match decide_final_only(state, table, cfg)? {
                Some(d) => PolicyAction::Dispatch(d),
                None => PolicyAction::NoWork,
            }
        }
        PolicyKind::OursBatchSize1 => {
            let bs1 = SchedulerConfig {
                b_max: 1,
                ..*cfg
            };
            match decide(state, table, &bs1)? {
                Some(d) => PolicyAction::Dispatch(d),
                None => PolicyAction::NoWork,
            }
        }
        PolicyKind::DeferredBatching => deferred_batching(state, table, cfg)?,
    };
    Ok(action)
}

fn decide_final_only(
    state: &SystemState,
    table: &ProfileTable,
    cfg: &SchedulerConfig,
) -> Result<Option<Decision>, SchedError> {
    // Uniform exit count is the common case; fall back to per-candidate
    // evaluation otherwise.
    let counts: Vec<usize> = table.models.iter().map(|m| m.exit_count()).collect();
    if counts.windows(2).all(|w| w[0] == w[1]) {
        return decide_with(state, table, cfg, Some(counts[0] - 1));
    }
    let mut best: Option<Decision> = None;
    for q in state.queues() {
        if q.is_empty() {
            continue;
        }
        let exit = counts[q.model] - 1;
        let cand = evaluate_candidate(state, q.model, Some(exit), table, cfg)?;
        let better = match &best {
            None => true,
            Some(b) => cand.decision.score < b.score,
        };
        if better {
            best = Some(cand.decision);
        }
    }
    Ok(best)
}
