//! Sweeps the sparsity weight of a classical solver and then calibrates it so
//! that the mean rank of L on a synthetic subset matches a target.
//!
//! cargo run --release --example calibrate_lambda -- [pcp|ialm] [SAMPLES] [TARGET]

use denise::baselines::{Algorithm, BaselineConfig};
use denise::datagen::{GenConfig, SampleSource, SyntheticSource};
use denise::harness::{calibrate_lambda, mean_rank, CalibrationConfig};
use denise::linalg::SymMatrix;

fn main() -> denise::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let algo: Algorithm = args.first().map_or(Ok(Algorithm::Pcp), |s| s.parse())?;
    let count: usize = args.get(1).map_or(20, |s| s.parse().expect("sample count"));
    let target: f64 = args.get(2).map_or(3.0, |s| s.parse().expect("target rank"));

    let src = SyntheticSource::new(GenConfig::standard(3, count))?;
    let samples: Vec<SymMatrix> = (0..count).map(|i| src.sample(i).m).collect();
    let base = BaselineConfig::standard(20);

    for lambda in [0.03, 0.1, 0.3, 1.0, 3.0] {
        println!("lambda {lambda:<5} mean rank {:.2}", mean_rank(algo, &samples, &base, lambda, 0.01)?);
    }
    let cal = calibrate_lambda(algo, &samples, &base, &CalibrationConfig::new(target))?;
    println!(
        "{}: lambda {:.4} gives mean rank {:.2} ({} evaluations)",
        algo.name(),
        cal.lambda,
        cal.mean_rank,
        cal.evaluations.len()
    );
    Ok(())
}
