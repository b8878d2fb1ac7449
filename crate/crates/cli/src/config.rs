//! Experiment configuration: a JSON document mirroring the runner's
//! parameters, with CLI flags layered on top as overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use eesim_core::profile::{generate_synthetic_profile, CalibrationParams, ProfileTable};
use eesim_core::PolicyKind;

/// Environment variable that overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "EESIM_OUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Profile(#[from] eesim_core::profile::ProfileError),
}

/// Source of the profile table: a file on disk or a synthetic calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBlock {
    pub seed: u64,
    /// Uniform latency scale over the default calibration.
    #[serde(default)]
    pub scale: Option<f64>,
    /// Full calibration override; `scale` applies on top when both set.
    #[serde(default)]
    pub calibration: Option<CalibrationParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadBlock {
    /// Explicit per-model arrival rates (requests/second). Mutually
    /// exclusive with `ratio`.
    #[serde(default)]
    pub rates_per_sec: Option<Vec<f64>>,
    /// Rate ratio across models; actual rate of model i is
    /// `ratio[i] * rate_unit`.
    #[serde(default)]
    pub ratio: Option<Vec<f64>>,
    #[serde(default)]
    pub rate_unit: Option<f64>,
}

/// Sweep variable for the `sweep` verb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Traffic intensity: the workload's rate unit.
    RateUnit,
    /// SLO deadline in microseconds.
    SloUs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

fn default_clip() -> f64 {
    10.0
}

fn default_b_max() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub profile_path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticBlock>,
    pub policy: String,
    pub slo_us: u64,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_b_max")]
    pub b_max: usize,
    pub workload: WorkloadBlock,
    pub duration_us: u64,
    pub warmup: usize,
    pub seeds: Vec<u64>,
    /// Exit labels the scheduler may use; omitted means all exits.
    #[serde(default)]
    pub exit_mask: Option<Vec<String>>,
    /// Model instances by profile model name; each instance gets its own
    /// queue. Omitted means one instance per profile model.
    #[serde(default)]
    pub model_instances: Option<Vec<String>>,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
    #[serde(default)]
    pub service_noise_cv: Option<f64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub write_traces: bool,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.profile_path, &self.synthetic) {
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "one of profile_path or synthetic is required".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "profile_path and synthetic are mutually exclusive".into(),
                ))
            }
            _ => {}
        }
        self.policy
            .parse::<PolicyKind>()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be non-empty".into()));
        }
        if self.slo_us == 0 || self.duration_us == 0 {
            return Err(ConfigError::Invalid(
                "slo_us and duration_us must be > 0".into(),
            ));
        }
        match (&self.workload.rates_per_sec, &self.workload.ratio) {
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "workload needs rates_per_sec or ratio".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "workload rates_per_sec and ratio are mutually exclusive".into(),
                ))
            }
            (Some(rates), None) => {
                if rates.iter().any(|&r| !(r > 0.0)) {
                    return Err(ConfigError::Invalid("rates must be positive".into()));
                }
            }
            (None, Some(ratio)) => {
                if ratio.iter().any(|&r| !(r > 0.0)) {
                    return Err(ConfigError::Invalid("ratio entries must be positive".into()));
                }
                let sweeps_rate = self
                    .sweep
                    .as_ref()
                    .is_some_and(|s| s.variable == SweepVariable::RateUnit);
                if self.workload.rate_unit.is_none() && !sweeps_rate {
                    return Err(ConfigError::Invalid(
                        "ratio workload needs rate_unit (or a rate_unit sweep)".into(),
                    ));
                }
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(ConfigError::Invalid("sweep values must be non-empty".into()));
            }
        }
        if let Some(mask) = &self.exit_mask {
            if mask.is_empty() {
                return Err(ConfigError::Invalid("exit_mask must keep >= 1 exit".into()));
            }
        }
        Ok(())
    }

    /// Loads or generates the source profile, then applies instancing and
    /// the exit mask. The returned table is what the simulator runs on.
    pub fn build_table(&self) -> Result<ProfileTable, ConfigError> {
        let base = match (&self.profile_path, &self.synthetic) {
            (Some(path), None) => ProfileTable::load(path)?,
            (None, Some(block)) => {
                let mut cal = block.calibration.clone().unwrap_or_default();
                if let Some(scale) = block.scale {
                    cal = cal.scaled(scale);
                }
                generate_synthetic_profile(block.seed, &cal)?
            }
            _ => unreachable!("validated"),
        };
        let instanced = match &self.model_instances {
            Some(names) => base.instantiate(names)?,
            None => base,
        };
        let masked = match &self.exit_mask {
            Some(mask) => instanced.restrict_exits(mask)?,
            None => instanced,
        };
        Ok(masked)
    }

    /// Per-model arrival rates for a given rate unit (ignored for
    /// explicit-rate workloads).
    pub fn rates_for(&self, model_count: usize, rate_unit: f64) -> Result<Vec<f64>, ConfigError> {
        match (&self.workload.rates_per_sec, &self.workload.ratio) {
            (Some(rates), None) => {
                if rates.len() != model_count {
                    return Err(ConfigError::Invalid(format!(
                        "{} rates for {} model queues",
                        rates.len(),
                        model_count
                    )));
                }
                Ok(rates.clone())
            }
            (None, Some(ratio)) => {
                if ratio.len() != model_count {
                    return Err(ConfigError::Invalid(format!(
                        "{} ratio entries for {} model queues",
                        ratio.len(),
                        model_count
                    )));
                }
                Ok(ratio.iter().map(|r| r * rate_unit).collect())
            }
            _ => unreachable!("validated"),
        }
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}
