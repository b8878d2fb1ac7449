//! Evaluation metrics over a completed simulation run.

use thiserror::Error;

use crate::profile::{ProfileError, ProfileTable};
use crate::queueing::Task;
use crate::sim::SimResult;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric undefined on an empty task list")]
    Empty,
    #[error("task {0} has no recorded exit")]
    MissingExit(crate::queueing::TaskId),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Aggregated metrics for one run, computed after warmup exclusion.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub p95_latency_us: u64,
    /// Fraction of completed tasks with T strictly greater than tau.
    pub violation_ratio: f64,
    /// Trace-weighted mean of per-exit top-1 accuracy.
    pub accuracy_pct: f64,
    /// Mean served exit ordinal.
    pub avg_exit_depth: f64,
    /// Completed-task count per exit ordinal; sums to `completed`.
    pub exit_histogram: Vec<u64>,
    pub completed: usize,
    pub backlog: usize,
}

/// Nearest-rank percentile: the ceil(p/100 * N)-th smallest value.
pub fn percentile_nearest_rank(latencies_us: &[u64], percentile: u32) -> Result<u64, MetricsError> {
    if latencies_us.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = latencies_us.to_vec();
    sorted.sort_unstable();
    let rank = (percentile as usize * sorted.len()).div_ceil(100);
    Ok(sorted[rank.max(1) - 1])
}

pub fn p95_latency(latencies_us: &[u64]) -> Result<u64, MetricsError> {
    percentile_nearest_rank(latencies_us, 95)
}

/// SLO violation ratio V: |{i : T_i > tau}| / N_total. Strict inequality.
pub fn violation_ratio(tasks: &[Task], slo_us: u64) -> Result<f64, MetricsError> {
    if tasks.is_empty() {
        return Err(MetricsError::Empty);
    }
    let violations = tasks
        .iter()
        .filter(|t| t.total_latency_us().is_some_and(|l| l > slo_us))
        .count();
    Ok(violations as f64 / tasks.len() as f64)
}

/// Mean per-exit accuracy over completed tasks, looked up from the table.
pub fn effective_accuracy(tasks: &[Task], table: &ProfileTable) -> Result<f64, MetricsError> {
    if tasks.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sum = 0.0;
    for t in tasks {
        let exit = t.exit.ok_or(MetricsError::MissingExit(t.id))?;
        sum += table.lookup_accuracy(t.id.model, exit)?;
    }
    Ok(sum / tasks.len() as f64)
}

/// Mean served exit ordinal plus the per-exit completion histogram.
pub fn average_exit_depth(tasks: &[Task]) -> Result<(f64, Vec<u64>), MetricsError> {
    if tasks.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut histogram: Vec<u64> = Vec::new();
    let mut sum = 0usize;
    for t in tasks {
        let exit = t.exit.ok_or(MetricsError::MissingExit(t.id))?;
        if exit >= histogram.len() {
            histogram.resize(exit + 1, 0);
        }
        histogram[exit] += 1;
        sum += exit;
    }
    Ok((sum as f64 / tasks.len() as f64, histogram))
}

impl RunMetrics {
    /// Computes all metrics from a run, dropping the first `warmup`
    /// completed tasks (global, in completion order).
    pub fn from_result(
        result: &SimResult,
        table: &ProfileTable,
        slo_us: u64,
        warmup: usize,
    ) -> Result<Self, MetricsError> {
        let tasks = result.completed.get(warmup.min(result.completed.len())..).unwrap_or(&[]);
        if tasks.is_empty() {
            return Err(MetricsError::Empty);
        }
        let latencies: Vec<u64> = tasks
            .iter()
            .filter_map(|t| t.total_latency_us())
            .collect();
        let (avg_exit_depth, exit_histogram) = average_exit_depth(tasks)?;
        Ok(RunMetrics {
            p95_latency_us: p95_latency(&latencies)?,
            violation_ratio: violation_ratio(tasks, slo_us)?,
            accuracy_pct: effective_accuracy(tasks, table)?,
            avg_exit_depth,
            exit_histogram,
            completed: tasks.len(),
            backlog: result.backlog,
        })
    }
}
