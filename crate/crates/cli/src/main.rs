use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use eesim_cli::config::{ExperimentConfig, SweepBlock, SweepVariable};
use eesim_cli::{compare_policies, run_experiment};
use eesim_core::profile::{generate_synthetic_profile, CalibrationParams, ProfileTable};

/// Deadline-aware multi-model serving simulator.
#[derive(Parser)]
#[command(name = "eesim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring config fields; any flag given overrides the file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Scheduling policy name.
    #[arg(long)]
    policy: Option<String>,
    /// Deadline in microseconds.
    #[arg(long)]
    slo_us: Option<u64>,
    /// Urgency clip constant.
    #[arg(long)]
    clip: Option<f64>,
    /// Maximum batch size.
    #[arg(long)]
    b_max: Option<usize>,
    /// Simulated duration in microseconds.
    #[arg(long)]
    duration_us: Option<u64>,
    /// Completed tasks to drop before computing metrics.
    #[arg(long)]
    warmup: Option<usize>,
    /// Seed list (repeatable), replacing the config's seeds.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Latency profile file, replacing the config's profile source.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Also write per-task trace CSVs.
    #[arg(long)]
    write_traces: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(p) = &self.policy {
            cfg.policy = p.clone();
        }
        if let Some(v) = self.slo_us {
            cfg.slo_us = v;
        }
        if let Some(v) = self.clip {
            cfg.clip = v;
        }
        if let Some(v) = self.b_max {
            cfg.b_max = v;
        }
        if let Some(v) = self.duration_us {
            cfg.duration_us = v;
        }
        if let Some(v) = self.warmup {
            cfg.warmup = v;
        }
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if let Some(p) = &self.profile {
            cfg.profile_path = Some(p.clone());
            cfg.synthetic = None;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if self.write_traces {
            cfg.write_traces = true;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment from a config file.
    Run {
        /// Experiment config (JSON).
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a parameter sweep (traffic intensity or deadline).
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Sweep variable, replacing the config's sweep block.
        #[arg(long, value_enum)]
        variable: Option<SweepVarArg>,
        /// Sweep values (comma separated), replacing the config's.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Run several policies over identical arrival streams.
    Compare {
        config: PathBuf,
        /// Policy names (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate a synthetic latency profile.
    GenProfile {
        /// Output file for the profile JSON.
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Uniform latency scale over the default calibration.
        #[arg(long)]
        scale: Option<f64>,
        /// Platform label stored in the profile metadata.
        #[arg(long)]
        platform: Option<String>,
    },
    /// Validate a profile file against all table invariants.
    ValidateProfile { path: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SweepVarArg {
    RateUnit,
    SloUs,
}

impl From<SweepVarArg> for SweepVariable {
    fn from(v: SweepVarArg) -> Self {
        match v {
            SweepVarArg::RateUnit => SweepVariable::RateUnit,
            SweepVarArg::SloUs => SweepVariable::SloUs,
        }
    }
}

fn load_config(path: &PathBuf, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            report_written(&run_experiment(&cfg)?);
        }
        Command::Sweep {
            config,
            overrides,
            variable,
            values,
        } => {
            let mut cfg = load_config(&config, &overrides)?;
            match (variable, values.is_empty()) {
                (Some(var), false) => {
                    cfg.sweep = Some(SweepBlock {
                        variable: var.into(),
                        values,
                    });
                }
                (None, true) => {}
                _ => bail!("--variable and --values must be given together"),
            }
            if cfg.sweep.is_none() {
                bail!("sweep needs a sweep block in the config or --variable/--values");
            }
            cfg.validate()?;
            report_written(&run_experiment(&cfg)?);
        }
        Command::Compare {
            config,
            policies,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            report_written(&compare_policies(&cfg, &policies)?);
        }
        Command::GenProfile {
            out,
            seed,
            scale,
            platform,
        } => {
            let mut cal = CalibrationParams::default();
            if let Some(s) = scale {
                cal = cal.scaled(s);
            }
            if let Some(p) = platform {
                cal.platform = p;
            }
            let table =
                generate_synthetic_profile(seed, &cal).context("generating synthetic profile")?;
            table
                .store(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
        }
        Command::ValidateProfile { path } => {
            let table = ProfileTable::load(&path)
                .with_context(|| format!("loading {}", path.display()))?;
            table.validate().context("profile invariant check failed")?;
            println!(
                "ok: {} models, b_max {}, platform {}",
                table.model_count(),
                table.b_max,
                table.platform
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
