use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use denise::baselines::{self, Algorithm, BaselineConfig};
use denise::datagen::{gen_dataset_to_file, Dataset, FactorDistribution, GenConfig, SampleSource, SyntheticSource};
use denise::harness::{self, Assertion, CompareConfig, IngestConfig, ReturnKind, RunManifest};
use denise::linalg::SymMatrix;
use denise::model::{Architecture, DeniseModel, InputNorm, NetworkParams};
use denise::train::{self, Batching, LossKind, StepRule, TrainConfig};
use denise::{DeniseError, Result};

#[derive(Parser)]
#[command(name = "denise", version, about = "Low-rank plus sparse decomposition of PSD matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Gen {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        k0: usize,
        #[arg(long, default_value_t = 0.95)]
        s0: f64,
        #[arg(long, default_value = "normal")]
        dist: FactorDistribution,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised training.
    Train {
        /// Dataset file; omit to train on lazily generated samples.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Sample count for generated training data.
        #[arg(long, default_value_t = 200_000)]
        synthetic: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// `default` or three hidden widths `H1,H2,H3`.
        #[arg(long, default_value = "default")]
        arch: String,
        #[arg(long)]
        no_standardize: bool,
        #[arg(long, default_value_t = 0)]
        init_seed: u64,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// Continue training a model with the unsupervised loss.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        /// Dataset file of unlabeled matrices (e.g. from `ingest`).
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// Run a classical solver on one matrix.
    Baseline {
        #[arg(long)]
        algo: Algorithm,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        symmetrize: bool,
        /// Output prefix; writes `<prefix>L.csv`, `<prefix>S.csv`, `<prefix>stats.json`.
        #[arg(long)]
        out: String,
    },
    /// Rolling correlation matrices from a price CSV.
    Ingest {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long, default_value_t = 252)]
        window: usize,
        #[arg(long, default_value_t = 5)]
        shift: usize,
        #[arg(long, default_value_t = 0.77)]
        split: f64,
        #[arg(long)]
        simple_returns: bool,
        #[arg(long, default_value_t = 5)]
        max_fill: usize,
        /// Writes `train.ds`, `test.ds` and `windows.csv`.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate several methods on one dataset.
    Compare {
        /// JSON `CompareConfig`.
        #[arg(long, required_unless_present = "rerun")]
        config: Option<PathBuf>,
        /// Re-execute a recorded manifest and compare output hashes.
        #[arg(long)]
        rerun: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Threshold such as `Denise:rel_err_l<=0.45`; exit code 4 on failure.
        #[arg(long = "assert")]
        assertions: Vec<Assertion>,
    },
    /// Decompose one matrix with a trained model.
    Decompose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        symmetrize: bool,
        /// Output prefix; writes `<prefix>L.csv` and `<prefix>S.csv`.
        #[arg(long)]
        out: String,
    },
}

#[derive(Args)]
struct OptArgs {
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// `adagrad`, `adagrad:<L>` or `const:<rate>`.
    #[arg(long, default_value = "adagrad")]
    step: StepRule,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    /// Draw every batch i.i.d. instead of shuffling epochs.
    #[arg(long)]
    resample: bool,
    #[arg(long)]
    out: PathBuf,
    /// Training curve CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl OptArgs {
    fn config(&self, loss: LossKind) -> TrainConfig {
        TrainConfig {
            loss,
            batch_size: self.batch,
            epochs: self.epochs,
            step_rule: self.step,
            seed: self.seed,
            delta: self.delta,
            clip_norm: self.clip,
            eval_every: self.eval_every,
            batching: if self.resample { Batching::Resample } else { Batching::EpochShuffle },
            ..TrainConfig::default()
        }
    }
}

fn prefixed(prefix: &str, name: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}{name}"))
}

fn fit(
    params: &NetworkParams,
    source: &dyn SampleSource,
    cfg: &TrainConfig,
    opt: &OptArgs,
    provenance: serde_json::Value,
) -> Result<()> {
    let outcome = train::train(params, source, None, cfg)?;
    let mut model = DeniseModel::new(outcome.best, cfg.smooth());
    model.provenance = provenance;
    model.save(&opt.out)?;
    if let Some(path) = &opt.report {
        let header = vec![
            ("config".to_string(), serde_json::to_string(cfg)?),
            ("steps".to_string(), outcome.report.steps.to_string()),
        ];
        outcome.report.write_csv(path, &header)?;
    }
    println!(
        "{} steps, best held-out loss {:?}, model written to {}",
        outcome.report.steps,
        outcome.report.best_eval_loss,
        opt.out.display()
    );
    Ok(())
}

fn read_matrix(path: &Path, symmetrize: bool) -> Result<SymMatrix> {
    SymMatrix::read_csv(path, symmetrize)
}

fn run(cli: Cli) -> Result<ExitCode> {
    harness::init_thread_pool()?;
    match cli.command {
        Command::Gen {
            n,
            k0,
            s0,
            dist,
            seed,
            count,
            out,
        } => {
            let cfg = GenConfig {
                n,
                k0,
                s0,
                distribution: dist,
                seed,
                count,
            };
            gen_dataset_to_file(&cfg, &out)?;
            println!("wrote {count} samples to {}", out.display());
        }
        Command::Train {
            data,
            synthetic,
            k,
            arch,
            no_standardize,
            init_seed,
            opt,
        } => {
            let source: Box<dyn SampleSource> = match &data {
                Some(path) => Box::new(Dataset::read(path)?),
                None => Box::new(SyntheticSource::new(GenConfig::standard(opt.seed, synthetic))?),
            };
            let n = source.dim();
            let arch = if arch == "default" {
                Architecture::default_sizing(n, k)?
            } else {
                let widths: Vec<usize> = arch
                    .split(',')
                    .map(|w| w.trim().parse().map_err(|_| DeniseError::Config(format!("bad width `{w}`"))))
                    .collect::<Result<_>>()?;
                let widths: [usize; 3] = widths
                    .try_into()
                    .map_err(|_| DeniseError::Config("--arch needs exactly three widths".into()))?;
                Architecture::new(n, k, widths)?
            };
            let mut params = NetworkParams::init(arch, init_seed);
            if !no_standardize {
                params = params.with_input_norm(InputNorm::fit(source.as_ref(), 50_000))?;
            }
            let cfg = opt.config(LossKind::Supervised);
            let provenance = serde_json::json!({
                "data": data.map(|p| p.display().to_string()),
                "train": &cfg,
                "init_seed": init_seed,
            });
            fit(&params, source.as_ref(), &cfg, &opt, provenance)?;
        }
        Command::Finetune { model, data, opt } => {
            let base = DeniseModel::load(&model)?;
            let source = Dataset::read(&data)?;
            let cfg = opt.config(LossKind::Unsupervised);
            let provenance = serde_json::json!({
                "finetuned_from": model.display().to_string(),
                "data": data.display().to_string(),
                "train": &cfg,
            });
            fit(&base.params, &source, &cfg, &opt, provenance)?;
        }
        Command::Baseline {
            algo,
            lambda,
            rank,
            tol,
            max_iters,
            input,
            symmetrize,
            out,
        } => {
            let m = read_matrix(&input, symmetrize)?;
            let cfg = BaselineConfig {
                target_rank: rank,
                tol,
                max_iters,
                ..lambda.map_or_else(|| BaselineConfig::standard(m.n()), BaselineConfig::new)
            };
            let r = baselines::run(algo, m.as_matrix(), &cfg)?;
            r.l.write_csv(prefixed(&out, "L.csv"))?;
            r.s.write_csv(prefixed(&out, "S.csv"))?;
            let stats = serde_json::json!({
                "algorithm": algo,
                "config": cfg,
                "iters": r.iters,
                "converged": r.converged,
                "residual": r.residual,
                "wall_ms": r.wall_ms,
            });
            std::fs::write(prefixed(&out, "stats.json"), serde_json::to_string_pretty(&stats)?)?;
            println!("{} {} iterations, converged {}", algo.name(), r.iters, r.converged);
        }
        Command::Ingest {
            prices,
            window,
            shift,
            split,
            simple_returns,
            max_fill,
            out_dir,
        } => {
            let cfg = IngestConfig {
                window,
                shift,
                split_fraction: split,
                returns: if simple_returns { ReturnKind::Simple } else { ReturnKind::Log },
                max_fill,
                ..IngestConfig::new(prices)
            };
            let r = harness::ingest_correlations(&cfg)?;
            std::fs::create_dir_all(&out_dir)?;
            Dataset::from_matrices(&r.train, "correlation train split")?.write(out_dir.join("train.ds"))?;
            Dataset::from_matrices(&r.test, "correlation test split")?.write(out_dir.join("test.ds"))?;
            let mut w = csv::Writer::from_path(out_dir.join("windows.csv"))?;
            w.write_record(["split", "start_date", "end_date"])?;
            for (split, spans) in [("train", &r.train_windows), ("test", &r.test_windows)] {
                for s in spans {
                    w.write_record([split, &s.start_date, &s.end_date])?;
                }
            }
            w.flush()?;
            println!(
                "{} train / {} test matrices ({} rejected, {} purged)",
                r.train.len(),
                r.test.len(),
                r.rejected,
                r.purged
            );
        }
        Command::Compare {
            config,
            rerun,
            out,
            assertions,
        } => {
            if let Some(manifest) = rerun {
                let report = harness::rerun(&RunManifest::read(manifest)?, &out)?;
                if report.identical() {
                    println!("all output hashes reproduced");
                } else {
                    println!("hash mismatch: {}", report.mismatches.join(", "));
                    return Ok(ExitCode::from(4));
                }
                return Ok(ExitCode::SUCCESS);
            }
            let path = config.expect("clap enforces --config");
            let mut cfg: CompareConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            cfg.assertions.extend(assertions);
            let outcome = harness::compare(&cfg, &out)?;
            print!("{}", denise::metrics::summary_markdown(&cfg.title, &outcome.summaries));
            for a in &outcome.assertions {
                println!(
                    "{} {}:{:?} = {:?}",
                    if a.passed { "PASS" } else { "FAIL" },
                    a.assertion.method,
                    a.assertion.metric,
                    a.value
                );
            }
            if !outcome.assertions_passed() {
                return Ok(ExitCode::from(4));
            }
        }
        Command::Decompose {
            model,
            input,
            symmetrize,
            out,
        } => {
            let model = DeniseModel::load(model)?;
            let m = read_matrix(&input, symmetrize)?;
            let d = model.decompose(&m)?;
            d.l.write_csv(prefixed(&out, "L.csv"))?;
            d.s.write_csv(prefixed(&out, "S.csv"))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
