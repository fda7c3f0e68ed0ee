//! Supervised training on lazily generated synthetic matrices, followed by
//! evaluation on fresh normal and Student-t test sets.
//!
//! cargo run --release --example train_synthetic -- [SAMPLES] [EPOCHS] [OUT.json]

use denise::datagen::{FactorDistribution, GenConfig, SyntheticSource};
use denise::metrics::{evaluate_method, EvalOptions, Method};
use denise::model::{Architecture, DeniseModel, InputNorm, NetworkParams};
use denise::train::{train, StepRule, TrainConfig};
use denise::linalg::SymMatrix;

fn main() -> denise::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let samples: usize = args.first().map_or(200_000, |s| s.parse().expect("sample count"));
    let epochs: usize = args.get(1).map_or(20, |s| s.parse().expect("epoch count"));
    let out = args.get(2).cloned().unwrap_or_else(|| "denise_n20_k3.json".into());

    let source = SyntheticSource::new(GenConfig::standard(7, samples))?;
    let validation = SyntheticSource::new(GenConfig::standard(8, 4_000))?;
    let arch = Architecture::new(20, 3, [256, 256, 128])?;
    let params = NetworkParams::init(arch, 0).with_input_norm(InputNorm::fit(&source, 50_000))?;
    let cfg = TrainConfig {
        epochs,
        batch_size: 8,
        step_rule: StepRule::Constant { rate: 1e-3 },
        seed: 1,
        ..TrainConfig::default()
    };
    let outcome = train(&params, &source, Some(&validation), &cfg)?;
    let model = DeniseModel::new(outcome.best, cfg.smooth());
    model.save(&out)?;
    println!("saved {out} (best held-out step {:?})", outcome.report.best_step);

    let method = Method::new("Denise", |m: &SymMatrix| {
        let d = model.decompose(m)?;
        Ok((d.l, d.s))
    });
    let opts = EvalOptions { timing_repeats: 0, ..EvalOptions::default() };
    for (label, dist, seed) in [
        ("normal", FactorDistribution::Normal, 1),
        ("student-t", FactorDistribution::student_t(), 99),
    ] {
        let test = SyntheticSource::new(GenConfig {
            distribution: dist,
            ..GenConfig::standard(seed, 10_000)
        })?;
        let s = evaluate_method(&method, &test, &opts)?;
        println!(
            "{label}: r(L) {} s(S) {} rel.error(L) {} rel.error(S) {}",
            s.r_l.display(),
            s.s_s.display(),
            s.rel_err_l.display(),
            s.rel_err_s.display()
        );
    }
    Ok(())
}
