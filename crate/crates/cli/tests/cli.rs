//! Config validation, CSV output shape, and binary smoke tests.

use std::path::PathBuf;
use std::process::Command;

use eesim_cli::config::{
    ExperimentConfig, SweepBlock, SweepVariable, SyntheticBlock, WorkloadBlock,
};
use eesim_cli::{compare_policies, run_experiment};

fn base_config(out: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        profile_path: None,
        synthetic: Some(SyntheticBlock {
            seed: 42,
            scale: None,
            calibration: None,
        }),
        policy: "edgeserving".into(),
        slo_us: 50_000,
        clip: 10.0,
        b_max: 10,
        workload: WorkloadBlock {
            rates_per_sec: None,
            ratio: Some(vec![3.0, 2.0, 1.0]),
            rate_unit: Some(40.0),
        },
        duration_us: 1_000_000,
        warmup: 100,
        seeds: vec![1, 2],
        exit_mask: None,
        model_instances: None,
        sweep: None,
        service_noise_cv: None,
        output_dir: out,
        write_traces: false,
    }
}

#[test]
fn config_rejects_missing_profile_source() {
    let mut cfg = base_config(PathBuf::from("out"));
    cfg.synthetic = None;
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("profile_path or synthetic"), "{err}");
}

#[test]
fn config_rejects_both_profile_sources() {
    let mut cfg = base_config(PathBuf::from("out"));
    cfg.profile_path = Some(PathBuf::from("p.json"));
    assert!(cfg.validate().is_err());
}

#[test]
fn config_rejects_unknown_policy() {
    let mut cfg = base_config(PathBuf::from("out"));
    cfg.policy = "round_robin".into();
    assert!(cfg.validate().is_err());
}

#[test]
fn config_rejects_unknown_json_field() {
    let text = r#"{"policy": "edgeserving", "frobnicate": 1}"#;
    let err = serde_json::from_str::<ExperimentConfig>(text).unwrap_err();
    assert!(err.to_string().contains("frobnicate"));
}

#[test]
fn config_rejects_empty_exit_mask() {
    let mut cfg = base_config(PathBuf::from("out"));
    cfg.exit_mask = Some(vec![]);
    assert!(cfg.validate().is_err());
}

#[test]
fn exit_mask_restricts_scheduler_search_space() {
    let cfg = {
        let mut c = base_config(PathBuf::from("out"));
        c.exit_mask = Some(vec!["layer1".into(), "final".into()]);
        c
    };
    let table = cfg.build_table().unwrap();
    for m in 0..table.model_count() {
        assert_eq!(table.model(m).unwrap().exit_count(), 2);
    }

    let mut bad = base_config(PathBuf::from("out"));
    bad.exit_mask = Some(vec!["no-such-exit".into()]);
    assert!(bad.build_table().is_err());
}

#[test]
fn summary_csv_has_fixed_header_and_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config(dir.path().to_path_buf());
    cfg.sweep = Some(SweepBlock {
        variable: SweepVariable::RateUnit,
        values: vec![20.0, 40.0, 60.0],
    });
    let written = run_experiment(&cfg).unwrap();
    let text = std::fs::read_to_string(&written[0]).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sweep_var,policy,seed_count,p95_us_mean,p95_us_std,violation_ratio_mean,\
         violation_ratio_std,accuracy_pct_mean,avg_exit_depth_mean,completed,backlog"
            .replace(char::is_whitespace, "")
    );
    assert_eq!(lines.count(), 3);
    for field in text.lines().skip(1).flat_map(|l| l.split(',').skip(3)) {
        if let Ok(v) = field.parse::<f64>() {
            assert!(v.is_finite(), "non-finite field {field}");
        }
    }
}

#[test]
fn trace_csv_has_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config(dir.path().to_path_buf());
    cfg.write_traces = true;
    cfg.seeds = vec![7];
    let written = run_experiment(&cfg).unwrap();
    let trace = written
        .iter()
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("trace_"))
        .expect("trace file written");
    let text = std::fs::read_to_string(trace).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "task_id,model,arrival_us,dispatch_us,complete_us,exit,violated"
    );
    assert!(text.lines().count() > 100);
}

#[test]
fn compare_writes_one_summary_per_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_config(dir.path().to_path_buf());
    let policies: Vec<String> = ["edgeserving", "all_final", "deferred_batching"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let written = compare_policies(&cfg, &policies).unwrap();
    assert_eq!(written.len(), 3);
    for (path, policy) in written.iter().zip(&policies) {
        assert_eq!(
            path.file_name().unwrap().to_str().unwrap(),
            format!("summary_{policy}.csv")
        );
        assert!(path.exists());
    }

    let err = compare_policies(&cfg, &[]).unwrap_err().to_string();
    assert!(err.contains("non-empty"), "{err}");
}

#[test]
fn binary_gen_and_validate_profile_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("profile.json");
    let gen = Command::new(env!("CARGO_BIN_EXE_eesim"))
        .args(["gen-profile", profile.to_str().unwrap(), "--seed", "7"])
        .output()
        .unwrap();
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));

    let validate = Command::new(env!("CARGO_BIN_EXE_eesim"))
        .args(["validate-profile", profile.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(validate.status.success());
    assert!(String::from_utf8_lossy(&validate.stdout).starts_with("ok:"));
}

#[test]
fn binary_fails_with_diagnostic_on_bad_input() {
    let out = Command::new(env!("CARGO_BIN_EXE_eesim"))
        .args(["validate-profile", "/nonexistent/profile.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn binary_run_honors_output_dir_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.json");
    let cfg = base_config(PathBuf::from("/nonexistent/should-not-be-used"));
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out_dir = dir.path().join("override-out");
    let out = Command::new(env!("CARGO_BIN_EXE_eesim"))
        .args(["run", cfg_path.to_str().unwrap()])
        .env(eesim_cli::OUTPUT_DIR_ENV, &out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("summary.csv").exists());
}
