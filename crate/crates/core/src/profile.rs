//! Offline latency/accuracy profiles.
//!
//! A [`ProfileTable`] holds the profiled inference latency `L(m, e, B)` for
//! every (model, exit, batch) cell in a complete grid, plus per-exit top-1
//! accuracy. Tables are immutable after load and shared read-only.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Xoshiro256PlusPlus;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("failed to read profile file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse profile JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("profile declares no models")]
    NoModels,
    #[error("model {model}: duplicate or unknown model id")]
    BadModelId { model: usize },
    #[error("model {model}: duplicate exit label {label:?}")]
    DuplicateExit { model: usize, label: String },
    #[error("model {model}: exit {label:?} missing from {field}")]
    IncompleteGrid {
        model: usize,
        label: String,
        field: &'static str,
    },
    #[error("model {model} exit {label:?}: expected {expected} batch cells, found {found}")]
    BatchCellCount {
        model: usize,
        label: String,
        expected: usize,
        found: usize,
    },
    #[error("model {model} exit {label:?} batch {batch}: latency must be > 0")]
    NonPositiveLatency {
        model: usize,
        label: String,
        batch: usize,
    },
    #[error(
        "model {model} exit {label:?}: latency decreases from batch {batch} to {next_batch} \
         ({a} -> {b} us)"
    )]
    BatchMonotonicity {
        model: usize,
        label: String,
        batch: usize,
        next_batch: usize,
        a: u64,
        b: u64,
    },
    #[error(
        "model {model} batch {batch}: latency not strictly increasing from exit {shallow:?} \
         to {deep:?} ({a} -> {b} us)"
    )]
    ExitMonotonicity {
        model: usize,
        batch: usize,
        shallow: String,
        deep: String,
        a: u64,
        b: u64,
    },
    #[error("model {model} exit {label:?}: accuracy {value} outside [0, 100]")]
    AccuracyRange {
        model: usize,
        label: String,
        value: f64,
    },
    #[error("model {model}: accuracy decreases from exit {shallow:?} to {deep:?}")]
    AccuracyMonotonicity {
        model: usize,
        shallow: String,
        deep: String,
    },
    #[error("lookup outside profile grid: model {model}, exit {exit}, batch {batch}")]
    OutOfGrid {
        model: usize,
        exit: usize,
        batch: usize,
    },
    #[error("unknown model id {model}")]
    UnknownModel { model: usize },
    #[error("infeasible calibration: {0}")]
    InfeasibleCalibration(String),
    #[error("profile law violation: {0}")]
    LawViolation(String),
    #[error("exit mask leaves model {model} with no exits")]
    EmptyExitMask { model: usize },
    #[error("unknown model name in instance list: {0:?}")]
    UnknownModelName(String),
}

/// One exit head of a model: ordinal 0 is the shallowest, the last ordinal
/// is the full network output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExitPoint {
    pub ordinal: usize,
    pub label: String,
}

/// Profile data for one model: exits ordered shallow to deep, accuracy and
/// latency indexed by exit ordinal, latency additionally by batch size - 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    pub id: usize,
    pub name: String,
    pub exits: Vec<String>,
    pub accuracy_pct: Vec<f64>,
    pub latency_us: Vec<Vec<u64>>,
}

impl ModelProfile {
    pub fn exit_count(&self) -> usize {
        self.exits.len()
    }
}

/// The complete offline profile: a full (models x exits x 1..=b_max) latency
/// grid plus per-exit accuracy. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub platform: String,
    /// Which latency statistic the cells hold ("mean" or "p95").
    pub statistic: String,
    pub b_max: usize,
    pub models: Vec<ModelProfile>,
}

// On-disk schema. Maps are keyed by exit label; BTreeMap keeps the stored
// form byte-deterministic.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    metadata: RawMetadata,
    models: Vec<RawModel>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetadata {
    platform: String,
    statistic: String,
    b_max: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    id: usize,
    name: String,
    exits: Vec<String>,
    accuracy_pct: BTreeMap<String, f64>,
    latency_us: BTreeMap<String, Vec<u64>>,
}

impl ProfileTable {
    pub fn model_count(&self) -> usize {
        self.models.len()
    }

    pub fn model(&self, model: usize) -> Result<&ModelProfile, ProfileError> {
        self.models
            .get(model)
            .ok_or(ProfileError::UnknownModel { model })
    }

    /// Exact cell lookup; no interpolation. `batch` is 1-based.
    pub fn lookup_latency(
        &self,
        model: usize,
        exit: usize,
        batch: usize,
    ) -> Result<u64, ProfileError> {
        let out_of_grid = ProfileError::OutOfGrid { model, exit, batch };
        if batch == 0 || batch > self.b_max {
            return Err(out_of_grid);
        }
        self.models
            .get(model)
            .and_then(|m| m.latency_us.get(exit))
            .and_then(|row| row.get(batch - 1))
            .copied()
            .ok_or(out_of_grid)
    }

    pub fn lookup_accuracy(&self, model: usize, exit: usize) -> Result<f64, ProfileError> {
        self.models
            .get(model)
            .and_then(|m| m.accuracy_pct.get(exit))
            .copied()
            .ok_or(ProfileError::OutOfGrid {
                model,
                exit,
                batch: 1,
            })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let raw: RawProfile = serde_json::from_str(text)?;
        Self::from_raw(raw)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<(), ProfileError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Canonical JSON form; deterministic for a given table.
    pub fn to_json(&self) -> String {
        let raw = self.to_raw();
        let mut s = serde_json::to_string_pretty(&raw).expect("profile serialization");
        s.push('\n');
        s
    }

    fn to_raw(&self) -> RawProfile {
        RawProfile {
            metadata: RawMetadata {
                platform: self.platform.clone(),
                statistic: self.statistic.clone(),
                b_max: self.b_max,
            },
            models: self
                .models
                .iter()
                .map(|m| RawModel {
                    id: m.id,
                    name: m.name.clone(),
                    exits: m.exits.clone(),
                    accuracy_pct: m
                        .exits
                        .iter()
                        .cloned()
                        .zip(m.accuracy_pct.iter().copied())
                        .collect(),
                    latency_us: m
                        .exits
                        .iter()
                        .cloned()
                        .zip(m.latency_us.iter().cloned())
                        .collect(),
                })
                .collect(),
        }
    }

    fn from_raw(raw: RawProfile) -> Result<Self, ProfileError> {
        let b_max = raw.metadata.b_max;
        let mut models = Vec::with_capacity(raw.models.len());
        for (index, rm) in raw.models.into_iter().enumerate() {
            if rm.id != index {
                return Err(ProfileError::BadModelId { model: rm.id });
            }
            let mut exits_seen = Vec::new();
            for label in &rm.exits {
                if exits_seen.contains(label) {
                    return Err(ProfileError::DuplicateExit {
                        model: index,
                        label: label.clone(),
                    });
                }
                exits_seen.push(label.clone());
            }
            let mut accuracy_pct = Vec::with_capacity(rm.exits.len());
            let mut latency_us = Vec::with_capacity(rm.exits.len());
            for label in &rm.exits {
                let acc =
                    *rm.accuracy_pct
                        .get(label)
                        .ok_or_else(|| ProfileError::IncompleteGrid {
                            model: index,
                            label: label.clone(),
                            field: "accuracy_pct",
                        })?;
                let row =
                    rm.latency_us
                        .get(label)
                        .ok_or_else(|| ProfileError::IncompleteGrid {
                            model: index,
                            label: label.clone(),
                            field: "latency_us",
                        })?;
                accuracy_pct.push(acc);
                latency_us.push(row.clone());
            }
            models.push(ModelProfile {
                id: index,
                name: rm.name,
                exits: rm.exits,
                accuracy_pct,
                latency_us,
            });
        }
        let table = ProfileTable {
            platform: raw.metadata.platform,
            statistic: raw.metadata.statistic,
            b_max,
            models,
        };
        table.validate()?;
        Ok(table)
    }

    /// Checks every table invariant: complete grid, positive cells, batch
    /// monotonicity, strict exit monotonicity, accuracy monotonicity.
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.models.is_empty() {
            return Err(ProfileError::NoModels);
        }
        for m in &self.models {
            for (e, label) in m.exits.iter().enumerate() {
                let row = &m.latency_us[e];
                if row.len() != self.b_max {
                    return Err(ProfileError::BatchCellCount {
                        model: m.id,
                        label: label.clone(),
                        expected: self.b_max,
                        found: row.len(),
                    });
                }
                for (b, &cell) in row.iter().enumerate() {
                    if cell == 0 {
                        return Err(ProfileError::NonPositiveLatency {
                            model: m.id,
                            label: label.clone(),
                            batch: b + 1,
                        });
                    }
                }
                for b in 0..row.len().saturating_sub(1) {
                    if row[b + 1] < row[b] {
                        return Err(ProfileError::BatchMonotonicity {
                            model: m.id,
                            label: label.clone(),
                            batch: b + 1,
                            next_batch: b + 2,
                            a: row[b],
                            b: row[b + 1],
                        });
                    }
                }
                let acc = m.accuracy_pct[e];
                if !(0.0..=100.0).contains(&acc) {
                    return Err(ProfileError::AccuracyRange {
                        model: m.id,
                        label: label.clone(),
                        value: acc,
                    });
                }
            }
            for e in 0..m.exits.len().saturating_sub(1) {
                for b in 0..self.b_max {
                    if m.latency_us[e + 1][b] <= m.latency_us[e][b] {
                        return Err(ProfileError::ExitMonotonicity {
                            model: m.id,
                            batch: b + 1,
                            shallow: m.exits[e].clone(),
                            deep: m.exits[e + 1].clone(),
                            a: m.latency_us[e][b],
                            b: m.latency_us[e + 1][b],
                        });
                    }
                }
                if m.accuracy_pct[e + 1] < m.accuracy_pct[e] {
                    return Err(ProfileError::AccuracyMonotonicity {
                        model: m.id,
                        shallow: m.exits[e].clone(),
                        deep: m.exits[e + 1].clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Restricts every model to the exits named in `mask` (matched by
    /// label). Ordinals are re-assigned contiguously in the restricted
    /// table. Errors if any model would lose all of its exits.
    pub fn restrict_exits(&self, mask: &[String]) -> Result<ProfileTable, ProfileError> {
        let mut models = Vec::with_capacity(self.models.len());
        for m in &self.models {
            let keep: Vec<usize> = (0..m.exits.len())
                .filter(|&e| mask.contains(&m.exits[e]))
                .collect();
            if keep.is_empty() {
                return Err(ProfileError::EmptyExitMask { model: m.id });
            }
            models.push(ModelProfile {
                id: m.id,
                name: m.name.clone(),
                exits: keep.iter().map(|&e| m.exits[e].clone()).collect(),
                accuracy_pct: keep.iter().map(|&e| m.accuracy_pct[e]).collect(),
                latency_us: keep.iter().map(|&e| m.latency_us[e].clone()).collect(),
            });
        }
        let table = ProfileTable {
            platform: self.platform.clone(),
            statistic: self.statistic.clone(),
            b_max: self.b_max,
            models,
        };
        table.validate()?;
        Ok(table)
    }

    /// Builds a deployment table from a list of model instances, each named
    /// after a model in this table. Every instance gets its own id (and in
    /// the simulator, its own queue), so homogeneous deployments like three
    /// copies of the same model are expressible.
    pub fn instantiate(&self, instance_names: &[String]) -> Result<ProfileTable, ProfileError> {
        let mut models = Vec::with_capacity(instance_names.len());
        for (idx, name) in instance_names.iter().enumerate() {
            let src = self
                .models
                .iter()
                .find(|m| &m.name == name)
                .ok_or_else(|| ProfileError::UnknownModelName(name.clone()))?;
            models.push(ModelProfile {
                id: idx,
                name: format!("{}#{}", src.name, idx),
                exits: src.exits.clone(),
                accuracy_pct: src.accuracy_pct.clone(),
                latency_us: src.latency_us.clone(),
            });
        }
        let table = ProfileTable {
            platform: self.platform.clone(),
            statistic: self.statistic.clone(),
            b_max: self.b_max,
            models,
        };
        table.validate()?;
        Ok(table)
    }
}

/// Calibration for the synthetic profile generator. Cell values follow
/// `L(m, e, B) = base(e) * mult(m) * jitter(m, e) * (1 + g * (B - 1))`,
/// rounded to integer microseconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationParams {
    pub platform: String,
    pub statistic: String,
    pub b_max: usize,
    pub model_names: Vec<String>,
    /// Per-model latency multipliers; must be strictly increasing for the
    /// model-ordering law to hold.
    pub model_multipliers: Vec<f64>,
    pub exit_labels: Vec<String>,
    /// Base latency (us) per exit for the reference model (multiplier 1.0).
    pub exit_base_us: Vec<f64>,
    /// Linear batch growth factor g; the batch-1 to batch-b_max latency
    /// ratio is 1 + g * (b_max - 1).
    pub batch_growth: f64,
    /// Relative per-(model, exit) jitter amplitude drawn from the seed.
    pub jitter_pct: f64,
    /// Top-1 accuracy percent, indexed [model][exit].
    pub accuracy_pct: Vec<Vec<f64>>,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            platform: "synthetic-highend".to_string(),
            statistic: "p95".to_string(),
            b_max: 10,
            model_names: vec![
                "ResNet50".to_string(),
                "ResNet101".to_string(),
                "ResNet152".to_string(),
            ],
            model_multipliers: vec![1.0, 1.35, 1.7],
            exit_labels: vec![
                "layer1".to_string(),
                "layer2".to_string(),
                "layer3".to_string(),
                "final".to_string(),
            ],
            exit_base_us: vec![600.0, 1300.0, 2400.0, 4000.0],
            batch_growth: 0.12,
            jitter_pct: 0.01,
            accuracy_pct: vec![
                vec![7.6, 12.1, 30.8, 74.4],
                vec![7.4, 14.5, 54.3, 77.9],
                vec![7.3, 17.2, 47.4, 78.0],
            ],
        }
    }
}

impl CalibrationParams {
    /// Uniformly scales all base latencies, emulating a slower or faster
    /// platform without touching the ratio structure.
    pub fn scaled(mut self, factor: f64) -> Self {
        for b in &mut self.exit_base_us {
            *b *= factor;
        }
        self
    }
}

/// Generates a calibrated synthetic table. The result always satisfies the
/// full set of table invariants plus the three profile ratio laws checked
/// by [`check_profile_laws`]; calibrations that cannot are rejected.
pub fn generate_synthetic_profile(
    seed: u64,
    calibration: &CalibrationParams,
) -> Result<ProfileTable, ProfileError> {
    let c = calibration;
    if c.model_names.len() != c.model_multipliers.len()
        || c.model_names.len() != c.accuracy_pct.len()
        || c.exit_labels.len() != c.exit_base_us.len()
        || c.accuracy_pct.iter().any(|a| a.len() != c.exit_labels.len())
    {
        return Err(ProfileError::InfeasibleCalibration(
            "mismatched calibration dimensions".to_string(),
        ));
    }
    if c.b_max == 0 {
        return Err(ProfileError::InfeasibleCalibration(
            "b_max must be >= 1".to_string(),
        ));
    }
    let mut rng = Xoshiro256PlusPlus::from_seed(seed);
    let mut models = Vec::with_capacity(c.model_names.len());
    for (mi, name) in c.model_names.iter().enumerate() {
        let mut latency_us = Vec::with_capacity(c.exit_labels.len());
        for base in &c.exit_base_us {
            let jitter = 1.0 + c.jitter_pct * (2.0 * rng.next_f64() - 1.0);
            let cell1 = base * c.model_multipliers[mi] * jitter;
            let row: Vec<u64> = (0..c.b_max)
                .map(|b| (cell1 * (1.0 + c.batch_growth * b as f64)).round().max(1.0) as u64)
                .collect();
            latency_us.push(row);
        }
        models.push(ModelProfile {
            id: mi,
            name: name.clone(),
            exits: c.exit_labels.clone(),
            accuracy_pct: c.accuracy_pct[mi].clone(),
            latency_us,
        });
    }
    let table = ProfileTable {
        platform: c.platform.clone(),
        statistic: c.statistic.clone(),
        b_max: c.b_max,
        models,
    };
    table
        .validate()
        .map_err(|e| ProfileError::InfeasibleCalibration(e.to_string()))?;
    check_profile_laws(&table)
        .map_err(|e| ProfileError::InfeasibleCalibration(e.to_string()))?;
    Ok(table)
}

/// Exhaustively checks the three ratio laws every shipped profile obeys:
///
/// (a) for every (model, exit), the batch-1 to batch-b_max latency ratio is
///     in [2, 3] (batching is sub-linear, far below proportional);
/// (b) for the deepest model, the final-exit to first-exit latency ratio is
///     in [6, 8] at every batch size;
/// (c) at every (exit, batch), latency is strictly increasing across the
///     model list order.
pub fn check_profile_laws(table: &ProfileTable) -> Result<(), ProfileError> {
    for m in &table.models {
        for (e, label) in m.exits.iter().enumerate() {
            let first = m.latency_us[e][0] as f64;
            let last = m.latency_us[e][table.b_max - 1] as f64;
            let ratio = last / first;
            if !(2.0..=3.0).contains(&ratio) {
                return Err(ProfileError::LawViolation(format!(
                    "batch ratio law: model {} exit {:?} has 1->{} ratio {:.3}, outside [2, 3]",
                    m.id, label, table.b_max, ratio
                )));
            }
        }
    }
    let deepest = table.models.last().ok_or(ProfileError::NoModels)?;
    let last_exit = deepest.exits.len() - 1;
    for b in 0..table.b_max {
        let ratio = deepest.latency_us[last_exit][b] as f64 / deepest.latency_us[0][b] as f64;
        if !(6.0..=8.0).contains(&ratio) {
            return Err(ProfileError::LawViolation(format!(
                "exit ratio law: model {} final/first ratio {:.3} at batch {}, outside [6, 8]",
                deepest.id,
                ratio,
                b + 1
            )));
        }
    }
    for w in table.models.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.exits.len() != b.exits.len() {
            return Err(ProfileError::LawViolation(format!(
                "model ordering law: models {} and {} have different exit counts",
                a.id, b.id
            )));
        }
        for e in 0..a.exits.len() {
            for batch in 0..table.b_max {
                if b.latency_us[e][batch] <= a.latency_us[e][batch] {
                    return Err(ProfileError::LawViolation(format!(
                        "model ordering law: model {} not slower than model {} at exit {} batch {}",
                        b.id,
                        a.id,
                        e,
                        batch + 1
                    )));
                }
            }
        }
    }
    Ok(())
}
