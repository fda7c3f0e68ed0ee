//! Compares a trained model with the classical solvers on a synthetic test set,
//! writes the result tables and reruns the recorded manifest.
//!
//! cargo run --release --example compare_methods -- MODEL.json [OUT_DIR]
//!
//! MODEL.json comes from the `train_synthetic` example or `denise train`.

use std::path::PathBuf;

use denise::baselines::{Algorithm, BaselineConfig};
use denise::datagen::GenConfig;
use denise::harness::{compare, rerun, CalibrationSpec, CompareConfig, DataSpec, MethodSpec};
use denise::metrics::EvalOptions;

fn main() -> denise::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out_dir = PathBuf::from(args.get(1).cloned().unwrap_or_else(|| "compare_out".into()));
    std::fs::create_dir_all(&out_dir)?;
    let model = PathBuf::from(args.first().expect("usage: compare_methods MODEL.json [OUT_DIR]"));

    let base = BaselineConfig::standard(20);
    let cfg = CompareConfig {
        title: "synthetic n=20, k0=3".into(),
        data: DataSpec::Synthetic {
            config: GenConfig::standard(1, 200),
        },
        methods: vec![
            MethodSpec::Denise {
                name: "Denise".into(),
                model,
            },
            MethodSpec::Baseline {
                name: None,
                algo: Algorithm::Pcp,
                config: base.clone(),
                calibrate: Some(CalibrationSpec {
                    target_rank: 3.0,
                    subsample: 10,
                    lambda_lo: None,
                    lambda_hi: None,
                }),
            },
            MethodSpec::Baseline {
                name: None,
                algo: Algorithm::Ialm,
                config: base.clone(),
                calibrate: None,
            },
            MethodSpec::Baseline {
                name: None,
                algo: Algorithm::Fpcp,
                config: base.with_rank(3),
                calibrate: None,
            },
            MethodSpec::Oracle,
            MethodSpec::Zero,
        ],
        eval: EvalOptions::default(),
        baseline_limit: Some(20),
        timing_reference: Some("Denise".into()),
        assertions: vec!["Denise:r_l<=3".parse()?],
        max_failure_rate: 0.05,
    };
    let outcome = compare(&cfg, out_dir.join("run"))?;
    println!("{}", std::fs::read_to_string(out_dir.join("run/summary.md"))?);
    println!("{}", std::fs::read_to_string(out_dir.join("run/timing.md"))?);

    let report = rerun(&outcome.manifest, out_dir.join("rerun"))?;
    println!("rerun reproduced every hashed output: {}", report.identical());
    Ok(())
}
