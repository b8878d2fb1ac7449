//! Executes experiments: (sweep point x seed) simulation runs, metric
//! aggregation across seeds, and CSV output.
//!
//! Arrival streams depend only on (seed, workload), never on the policy,
//! so multi-policy comparisons over the same seeds are paired: every
//! policy faces byte-identical traffic.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use eesim_core::metrics::MetricsError;
use eesim_core::profile::ProfileTable;
use eesim_core::sim::{run, SimError, WorkloadSpec};
use eesim_core::{PolicyKind, RunMetrics, SchedulerConfig};

use crate::config::{ConfigError, ExperimentConfig, SweepVariable};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sched(#[from] eesim_core::scheduler::SchedError),
    #[error("failed writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One summary row: a sweep point aggregated across seeds. Column order is
/// fixed and part of the output contract.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SummaryRow {
    pub sweep_var: f64,
    pub policy: String,
    pub seed_count: usize,
    pub p95_us_mean: f64,
    pub p95_us_std: f64,
    pub violation_ratio_mean: f64,
    pub violation_ratio_std: f64,
    pub accuracy_pct_mean: f64,
    pub avg_exit_depth_mean: f64,
    pub completed: u64,
    pub backlog: u64,
}

/// Per-seed metrics for one sweep point, kept for callers that need more
/// than the summary (tests, trend checks).
#[derive(Debug, Clone)]
pub struct PointResult {
    pub sweep_var: f64,
    pub per_seed: Vec<RunMetrics>,
}

fn mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    values.sum::<f64>() / n as f64
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

impl PointResult {
    pub fn summary(&self, policy: &str) -> SummaryRow {
        let p95: Vec<f64> = self.per_seed.iter().map(|m| m.p95_latency_us as f64).collect();
        let viol: Vec<f64> = self.per_seed.iter().map(|m| m.violation_ratio).collect();
        SummaryRow {
            sweep_var: self.sweep_var,
            policy: policy.to_string(),
            seed_count: self.per_seed.len(),
            p95_us_mean: mean(p95.iter().copied()),
            p95_us_std: std_dev(&p95),
            violation_ratio_mean: mean(viol.iter().copied()),
            violation_ratio_std: std_dev(&viol),
            accuracy_pct_mean: mean(self.per_seed.iter().map(|m| m.accuracy_pct)),
            avg_exit_depth_mean: mean(self.per_seed.iter().map(|m| m.avg_exit_depth)),
            completed: self.per_seed.iter().map(|m| m.completed as u64).sum(),
            backlog: self.per_seed.iter().map(|m| m.backlog as u64).sum(),
        }
    }

    /// Mean and sample standard deviation of exit depth across seeds.
    pub fn exit_depth_stats(&self) -> (f64, f64) {
        let v: Vec<f64> = self.per_seed.iter().map(|m| m.avg_exit_depth).collect();
        (mean(v.iter().copied()), std_dev(&v))
    }

    /// Pooled final-exit share across seeds, given the final ordinal.
    pub fn final_exit_share(&self, final_ordinal: usize) -> f64 {
        let total: u64 = self
            .per_seed
            .iter()
            .map(|m| m.exit_histogram.iter().sum::<u64>())
            .sum();
        let finals: u64 = self
            .per_seed
            .iter()
            .map(|m| m.exit_histogram.get(final_ordinal).copied().unwrap_or(0))
            .sum();
        finals as f64 / total as f64
    }
}

/// Runs one (policy, sweep point, seed) simulation and computes metrics.
pub fn run_point(
    table: &ProfileTable,
    config: &ExperimentConfig,
    policy: PolicyKind,
    sweep_var: SweepVariable,
    value: f64,
    seed: u64,
) -> Result<(RunMetrics, eesim_core::SimResult), RunnerError> {
    let (rates, slo_us) = match sweep_var {
        SweepVariable::RateUnit => (config.rates_for(table.model_count(), value)?, config.slo_us),
        SweepVariable::SloUs => (
            config.rates_for(
                table.model_count(),
                config.workload.rate_unit.unwrap_or(1.0),
            )?,
            value as u64,
        ),
    };
    let sched = SchedulerConfig::new(slo_us, config.clip, config.b_max)?;
    let spec = WorkloadSpec {
        rates_per_sec: rates,
        duration_us: config.duration_us,
        warmup: config.warmup,
        seed,
        service_noise_cv: config.service_noise_cv,
    };
    let result = run(&spec, policy, table, &sched)?;
    let metrics = RunMetrics::from_result(&result, table, slo_us, config.warmup)?;
    Ok((metrics, result))
}

/// Executes every (sweep point x seed) combination for one policy.
/// Points and seeds run in parallel; results are ordered by (point, seed)
/// regardless of execution schedule.
pub fn run_policy_sweep(
    table: &ProfileTable,
    config: &ExperimentConfig,
    policy: PolicyKind,
    sweep_var: SweepVariable,
    values: &[f64],
) -> Result<Vec<PointResult>, RunnerError> {
    let jobs: Vec<(usize, f64, u64)> = values
        .iter()
        .enumerate()
        .flat_map(|(i, &v)| config.seeds.iter().map(move |&s| (i, v, s)))
        .collect();
    let outcomes: Vec<Result<(usize, RunMetrics), RunnerError>> = jobs
        .par_iter()
        .map(|&(i, v, seed)| {
            run_point(table, config, policy, sweep_var, v, seed).map(|(m, _)| (i, m))
        })
        .collect();
    let mut per_point: Vec<Vec<RunMetrics>> = vec![Vec::new(); values.len()];
    for outcome in outcomes {
        let (i, m) = outcome?;
        per_point[i].push(m);
    }
    Ok(values
        .iter()
        .zip(per_point)
        .map(|(&sweep_var, per_seed)| PointResult { sweep_var, per_seed })
        .collect())
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), RunnerError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn write_trace(
    path: &Path,
    result: &eesim_core::SimResult,
    slo_us: u64,
) -> Result<(), RunnerError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["task_id", "model", "arrival_us", "dispatch_us", "complete_us", "exit", "violated"])?;
    for task in &result.completed {
        let violated = task.total_latency_us().is_some_and(|l| l > slo_us);
        writer.write_record([
            task.id.to_string(),
            task.id.model.to_string(),
            task.arrival_us.to_string(),
            task.dispatch_us.map(|v| v.to_string()).unwrap_or_default(),
            task.complete_us.map(|v| v.to_string()).unwrap_or_default(),
            task.exit.map(|v| v.to_string()).unwrap_or_default(),
            violated.to_string(),
        ])?;
    }
    writer.flush().map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), RunnerError> {
    std::fs::create_dir_all(dir).map_err(|source| RunnerError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Sweep points for an experiment: the configured sweep, or a single
/// point at the configured workload when no sweep block is present.
fn sweep_points(config: &ExperimentConfig) -> (SweepVariable, Vec<f64>) {
    match &config.sweep {
        Some(s) => (s.variable, s.values.clone()),
        None => (
            SweepVariable::RateUnit,
            vec![config.workload.rate_unit.unwrap_or(1.0)],
        ),
    }
}

/// Runs the configured experiment for its single policy and writes
/// `summary.csv` (plus per-run traces when requested). Returns the paths
/// written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<PathBuf>, RunnerError> {
    config.validate()?;
    let table = config.build_table()?;
    let policy: PolicyKind = config.policy.parse().expect("validated policy name");
    let (variable, values) = sweep_points(config);
    let out_dir = config.resolved_output_dir();
    ensure_dir(&out_dir)?;

    let points = run_policy_sweep(&table, config, policy, variable, &values)?;
    let rows: Vec<SummaryRow> = points.iter().map(|p| p.summary(policy.name())).collect();
    let summary_path = out_dir.join("summary.csv");
    write_summary(&summary_path, &rows)?;
    let mut written = vec![summary_path];

    if config.write_traces {
        for (i, &value) in values.iter().enumerate() {
            for &seed in &config.seeds {
                let (_, result) = run_point(&table, config, policy, variable, value, seed)?;
                let slo = match variable {
                    SweepVariable::SloUs => value as u64,
                    SweepVariable::RateUnit => config.slo_us,
                };
                let path = out_dir.join(format!("trace_{}_p{}_s{}.csv", policy.name(), i, seed));
                write_trace(&path, &result, slo)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Runs the same experiment for several policies over identical seeds
/// (and therefore identical arrival streams), one summary file per
/// policy: `summary_<policy>.csv`.
pub fn compare_policies(
    config: &ExperimentConfig,
    policies: &[String],
) -> Result<Vec<PathBuf>, RunnerError> {
    if policies.is_empty() {
        return Err(RunnerError::Config(ConfigError::Invalid(
            "policy list must be non-empty".into(),
        )));
    }
    let kinds: Vec<PolicyKind> = policies
        .iter()
        .map(|p| {
            p.parse::<PolicyKind>()
                .map_err(|e| RunnerError::Config(ConfigError::Invalid(e.to_string())))
        })
        .collect::<Result<_, _>>()?;
    config.validate()?;
    let table = config.build_table()?;
    let (variable, values) = sweep_points(config);
    let out_dir = config.resolved_output_dir();
    ensure_dir(&out_dir)?;

    let mut written = Vec::new();
    for kind in kinds {
        let points = run_policy_sweep(&table, config, kind, variable, &values)?;
        let rows: Vec<SummaryRow> = points.iter().map(|p| p.summary(kind.name())).collect();
        let path = out_dir.join(format!("summary_{}.csv", kind.name()));
        write_summary(&path, &rows)?;
        written.push(path);
    }
    Ok(written)
}
