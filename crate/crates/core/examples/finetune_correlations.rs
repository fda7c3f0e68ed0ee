//! Ingests rolling correlation matrices from a price file, finetunes a trained
//! model on the training windows with the unsupervised loss, and compares the
//! model before and after finetuning with PCP on the test windows.
//!
//! cargo run --release --example finetune_correlations -- MODEL.json [PRICES.csv]

use denise::baselines::{pcp, BaselineConfig};
use denise::datagen::Dataset;
use denise::harness::{ingest_correlations, IngestConfig};
use denise::linalg::SymMatrix;
use denise::metrics::{evaluate_method, EvalOptions, Method, MethodSummary};
use denise::model::DeniseModel;
use denise::train::{finetune, LossKind, StepRule, TrainConfig};

fn row(s: &MethodSummary) {
    println!(
        "| {} | {} | {} | {} |",
        s.name,
        s.r_l.display(),
        s.s_s.display(),
        s.re_ml.display()
    );
}

fn main() -> denise::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = DeniseModel::load(args.first().expect("usage: finetune_correlations MODEL.json [PRICES.csv]"))?;
    let prices = args
        .get(1)
        .cloned()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/prices_fixture.csv").into());

    let windows = ingest_correlations(&IngestConfig::new(&prices))?;
    println!("{} train windows, {} test windows", windows.train.len(), windows.test.len());
    let train_set = Dataset::from_matrices(&windows.train, "train windows")?;
    let test_set = Dataset::from_matrices(&windows.test, "test windows")?;

    let cfg = TrainConfig {
        loss: LossKind::Unsupervised,
        epochs: 20,
        step_rule: StepRule::Constant { rate: 1e-4 },
        ..TrainConfig::default()
    };
    let tuned = finetune(&model.params, &train_set, None, &cfg)?;
    let tuned = DeniseModel::new(tuned.best, model.smooth);

    let base = BaselineConfig::standard(windows.assets.len());
    let methods = [
        Method::new("Denise", |m: &SymMatrix| {
            let d = model.decompose(m)?;
            Ok((d.l, d.s))
        }),
        Method::new("Denise (FT)", |m: &SymMatrix| {
            let d = tuned.decompose(m)?;
            Ok((d.l, d.s))
        }),
        Method::new("PCP", |m: &SymMatrix| {
            let r = pcp(m.as_matrix(), &base)?;
            Ok((r.l_sym()?, r.s_sym()?))
        }),
    ];
    let opts = EvalOptions {
        timing_repeats: 0,
        ..EvalOptions::default()
    };
    println!("| method | r(L) | s(S) | rel.error(M, L) |\n|---|---|---|---|");
    for m in &methods {
        row(&evaluate_method(m, &test_set, &opts)?);
    }
    Ok(())
}
