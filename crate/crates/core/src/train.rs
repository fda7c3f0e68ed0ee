//! Minibatch gradient descent on the smoothed l1 losses.
//!
//! Two step rules are available: a constant rate, and the AdaGrad-norm rule
//! `h_j = (4 L^2 + sum_{i<j} |G_i|^2 + eps)^(-1/2)` where `L` is a
//! user-supplied estimate of the Lipschitz constant of the loss gradient.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Sample, SampleSource};
use crate::error::{DeniseError, Result};
use crate::model::{forward, loss_from_output, GradientWorkspace, NetworkParams, SmoothAbs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Fit `L0`.
    Supervised,
    /// Fit `M` itself; `L0` is never read.
    Unsupervised,
}

impl FromStr for LossKind {
    type Err = DeniseError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sup" | "supervised" => Ok(LossKind::Supervised),
            "unsup" | "unsupervised" => Ok(LossKind::Unsupervised),
            other => Err(DeniseError::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    AdagradNorm { lipschitz_est: f64, eps: f64 },
    Constant { rate: f64 },
}

impl StepRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepRule::AdagradNorm { lipschitz_est, eps } => {
                if !(lipschitz_est > 0.0) || !(eps > 0.0) {
                    return Err(DeniseError::Config(
                        "adagrad rule needs a positive Lipschitz estimate and eps".into(),
                    ));
                }
            }
            StepRule::Constant { rate } => {
                if !(rate > 0.0) {
                    return Err(DeniseError::Config(format!("rate must be > 0, got {rate}")));
                }
            }
        }
        Ok(())
    }
}

impl FromStr for StepRule {
    type Err = DeniseError;

    /// `adagrad`, `adagrad:<L>`, or `const:<rate>`.
    fn from_str(s: &str) -> Result<Self> {
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| DeniseError::Config(format!("bad number in step rule `{s}`")))
        };
        let rule = if s == "adagrad" {
            StepRule::AdagradNorm {
                lipschitz_est: 1.0,
                eps: 1e-8,
            }
        } else if let Some(l) = s.strip_prefix("adagrad:") {
            StepRule::AdagradNorm {
                lipschitz_est: num(l)?,
                eps: 1e-8,
            }
        } else if let Some(r) = s.strip_prefix("const:") {
            StepRule::Constant { rate: num(r)? }
        } else {
            return Err(DeniseError::Config(format!("unknown step rule `{s}`")));
        };
        rule.validate()?;
        Ok(rule)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    /// Seeded permutation of the training indices each epoch.
    EpochShuffle,
    /// Every step draws its batch i.i.d. (with replacement).
    Resample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub step_rule: StepRule,
    pub seed: u64,
    pub delta: f64,
    pub clip_norm: Option<f64>,
    /// Steps between evaluations; 0 evaluates once per epoch only.
    pub eval_every: usize,
    pub batching: Batching,
    /// Tail fraction of the training source held out for monitoring when no
    /// explicit evaluation source is given.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Supervised,
            batch_size: 8,
            epochs: 1,
            step_rule: StepRule::AdagradNorm {
                lipschitz_est: 1.0,
                eps: 1e-8,
            },
            seed: 0,
            delta: SmoothAbs::default().delta,
            clip_norm: None,
            eval_every: 0,
            batching: Batching::EpochShuffle,
            holdout_fraction: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(DeniseError::Config("batch size must be at least 1".into()));
        }
        self.step_rule.validate()?;
        SmoothAbs::new(self.delta)?;
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(DeniseError::Config("clip norm must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(DeniseError::Config("holdout fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn smooth(&self) -> SmoothAbs {
        SmoothAbs { delta: self.delta }
    }
}

/// Optimizer state carried across steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    pub step: usize,
    /// `sum_i |G_i|^2` over completed steps.
    pub grad_sq_sum: f64,
    pub last_step_size: Option<f64>,
}

/// `(4 L^2 + sum_{i<j} |G_i|^2 + eps)^(-1/2)`.
pub fn step_size_adagrad_norm(state: &TrainState, lipschitz_est: f64, eps: f64) -> f64 {
    (4.0 * lipschitz_est * lipschitz_est + state.grad_sq_sum + eps).powf(-0.5)
}

fn target_of<'a>(sample: &'a Sample, loss: LossKind) -> &'a crate::linalg::SymMatrix {
    match loss {
        LossKind::Supervised => &sample.l0,
        LossKind::Unsupervised => &sample.m,
    }
}

/// Reusable per-run buffers.
pub struct Trainer {
    ws: GradientWorkspace,
    grad: Vec<f64>,
}

impl Trainer {
    pub fn new(params: &NetworkParams) -> Self {
        Trainer {
            ws: GradientWorkspace::new(),
            grad: vec![0.0; params.theta().len()],
        }
    }

    /// Averaged gradient of the last step.
    pub fn last_gradient(&self) -> &[f64] {
        &self.grad
    }

    /// One update `theta <- theta - h_j G_j` with
    /// `G_j = (1/N) sum_i grad phi(theta, M_i, L_i)`. Returns the batch mean
    /// loss at the pre-update parameters.
    pub fn sgd_step(
        &mut self,
        params: &mut NetworkParams,
        batch: &[Sample],
        cfg: &TrainConfig,
        state: &mut TrainState,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(DeniseError::Config("empty batch".into()));
        }
        let mu = cfg.smooth();
        let inputs: Vec<_> = batch.iter().map(|s| (&s.m, target_of(s, cfg.loss))).collect();
        let losses = self.ws.loss_and_grad(params, &inputs, mu, &mut self.grad)?;
        let inv_n = 1.0 / batch.len() as f64;
        for g in &mut self.grad {
            *g *= inv_n;
        }
        let mut norm_sq: f64 = self.grad.iter().map(|g| g * g).sum();
        if !norm_sq.is_finite() {
            return Err(self.locate_non_finite(params, batch, cfg, state.step));
        }
        if let Some(clip) = cfg.clip_norm {
            let norm = norm_sq.sqrt();
            if norm > clip {
                log::debug!("step {}: clipping gradient norm {norm:.3e} to {clip:.3e}", state.step);
                let scale = clip / norm;
                self.grad.iter_mut().for_each(|g| *g *= scale);
                norm_sq = clip * clip;
            }
        }
        let h = match cfg.step_rule {
            StepRule::Constant { rate } => rate,
            StepRule::AdagradNorm { lipschitz_est, eps } => {
                let h = step_size_adagrad_norm(state, lipschitz_est, eps);
                if let Some(prev) = state.last_step_size {
                    if h > prev {
                        return Err(DeniseError::StepSizeIncrease {
                            step: state.step,
                            previous: prev,
                            current: h,
                        });
                    }
                }
                h
            }
        };
        for (t, g) in params.theta_mut().iter_mut().zip(&self.grad) {
            *t -= h * g;
        }
        state.grad_sq_sum += norm_sq;
        state.last_step_size = Some(h);
        state.step += 1;
        Ok(losses.iter().sum::<f64>() * inv_n)
    }

    fn locate_non_finite(
        &mut self,
        params: &NetworkParams,
        batch: &[Sample],
        cfg: &TrainConfig,
        step: usize,
    ) -> DeniseError {
        let mut single = vec![0.0; params.theta().len()];
        let offender = batch
            .iter()
            .find(|s| {
                let pair = [(&s.m, target_of(s, cfg.loss))];
                match self.ws.loss_and_grad(params, &pair, cfg.smooth(), &mut single) {
                    Ok(loss) => !loss[0].is_finite() || !single.iter().all(|g| g.is_finite()),
                    Err(_) => true,
                }
            })
            .map_or(batch[0].index, |s| s.index);
        DeniseError::NonFiniteGradient {
            step,
            sample: offender,
        }
    }
}

/// Mean per-sample loss over a source.
pub fn mean_loss(
    params: &NetworkParams,
    source: &dyn SampleSource,
    indices: &[usize],
    loss: LossKind,
    mu: SmoothAbs,
) -> Result<f64> {
    if indices.is_empty() {
        return Ok(f64::NAN);
    }
    let (n, k) = (params.arch().n, params.arch().k);
    let mut total = 0.0;
    for &i in indices {
        let s = source.sample(i);
        let x = forward(params, &s.m)?.output;
        total += loss_from_output(&x, target_of(&s, loss), n, k, mu);
    }
    Ok(total / indices.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    /// Mean batch loss since the previous record.
    pub train_loss: f64,
    /// Mean loss on the held-out samples (NaN when there are none).
    pub eval_loss: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub steps: usize,
    /// Every AdaGrad-norm step size was no larger than its predecessor.
    pub step_sizes_monotone: bool,
    pub step_sizes: Vec<f64>,
    pub best_step: Option<usize>,
    pub best_eval_loss: Option<f64>,
}

impl TrainReport {
    /// `step,train_loss,eval_loss,wall_ms`, preceded by `# key: value`
    /// comment lines.
    pub fn write_csv(&self, path: impl AsRef<Path>, header: &[(String, String)]) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (k, v) in header {
            writeln!(out, "# {k}: {v}")?;
        }
        writeln!(out, "step,train_loss,eval_loss,wall_ms")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{:.3}", r.step, r.train_loss, r.eval_loss, r.wall_ms)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Parameters with the lowest held-out loss seen at any evaluation
    /// (the initial parameters when nothing was evaluated).
    pub best: NetworkParams,
    pub report: TrainReport,
}

/// Runs the configured number of epochs over `source`. Held-out samples
/// come from `eval` when given, otherwise from the tail of `source`.
pub fn train(
    params0: &NetworkParams,
    source: &dyn SampleSource,
    eval: Option<&dyn SampleSource>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.dim() != params0.arch().n {
        return Err(DeniseError::dim(
            format!("dataset dimension {}", params0.arch().n),
            source.dim(),
        ));
    }
    if let Some(e) = eval {
        if e.dim() != params0.arch().n {
            return Err(DeniseError::dim(params0.arch().n, e.dim()));
        }
    }
    let total = source.len();
    let holdout = match eval {
        Some(_) => 0,
        None if total >= 2 => ((total as f64 * cfg.holdout_fraction).round() as usize).min(total - 1),
        None => 0,
    };
    let train_count = total - holdout;
    if train_count == 0 {
        return Err(DeniseError::Config("no training samples".into()));
    }
    let (eval_source, eval_idx): (&dyn SampleSource, Vec<usize>) = match eval {
        Some(e) => (e, (0..e.len()).collect()),
        None => (source, (train_count..total).collect()),
    };

    let mut params = params0.clone();
    let mut best = params0.clone();
    let mut report = TrainReport {
        step_sizes_monotone: true,
        ..TrainReport::default()
    };
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            best,
            report,
        });
    }

    let mu = cfg.smooth();
    let started = Instant::now();
    let mut trainer = Trainer::new(&params);
    let mut state = TrainState::default();
    let mut since_record = (0.0, 0usize);
    let mut best_loss = f64::INFINITY;
    let steps_per_epoch = train_count.div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..train_count).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        if cfg.batching == Batching::EpochShuffle {
            order.shuffle(&mut rng);
        }
        for s in 0..steps_per_epoch {
            batch.clear();
            match cfg.batching {
                Batching::EpochShuffle => {
                    let chunk = &order[s * cfg.batch_size..((s + 1) * cfg.batch_size).min(train_count)];
                    batch.extend(chunk.iter().map(|&i| source.sample(i)));
                }
                Batching::Resample => {
                    for _ in 0..cfg.batch_size {
                        batch.push(source.sample(rng.gen_range(0..train_count)));
                    }
                }
            }
            let loss = trainer.sgd_step(&mut params, &batch, cfg, &mut state)?;
            if let Some(h) = state.last_step_size {
                if let Some(&prev) = report.step_sizes.last() {
                    if h > prev && matches!(cfg.step_rule, StepRule::AdagradNorm { .. }) {
                        report.step_sizes_monotone = false;
                    }
                }
                if matches!(cfg.step_rule, StepRule::AdagradNorm { .. }) {
                    report.step_sizes.push(h);
                }
            }
            since_record.0 += loss;
            since_record.1 += 1;

            let end_of_epoch = s + 1 == steps_per_epoch;
            let due = cfg.eval_every > 0 && state.step % cfg.eval_every == 0;
            if due || end_of_epoch {
                let eval_loss = mean_loss(&params, eval_source, &eval_idx, cfg.loss, mu)?;
                let record = TrainRecord {
                    step: state.step,
                    train_loss: since_record.0 / since_record.1 as f64,
                    eval_loss,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                };
                log::info!(
                    "epoch {epoch} step {}: train {:.4} eval {:.4}",
                    record.step,
                    record.train_loss,
                    record.eval_loss
                );
                if eval_loss < best_loss {
                    best_loss = eval_loss;
                    best = params.clone();
                    report.best_step = Some(state.step);
                    report.best_eval_loss = Some(eval_loss);
                }
                report.records.push(record);
                since_record = (0.0, 0);
            }
        }
    }
    report.steps = state.step;
    Ok(TrainOutcome {
        params,
        best,
        report,
    })
}

/// Continues training with the unsupervised loss on unlabeled matrices.
pub fn finetune(
    params: &NetworkParams,
    matrices: &dyn SampleSource,
    eval: Option<&dyn SampleSource>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.loss != LossKind::Unsupervised {
        return Err(DeniseError::Config("finetuning uses the unsupervised loss".into()));
    }
    train(params, matrices, eval, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{Dataset, GenConfig, SyntheticSource};
    use crate::linalg::SymMatrix;
    use crate::model::Architecture;

    fn toy_source(count: usize, seed: u64) -> SyntheticSource {
        SyntheticSource::new(GenConfig {
            n: 2,
            k0: 1,
            s0: 0.5,
            distribution: crate::datagen::FactorDistribution::Normal,
            seed,
            count,
        })
        .unwrap()
    }

    #[test]
    fn adagrad_step_size_formula() {
        let s = TrainState::default();
        assert_eq!(step_size_adagrad_norm(&s, 1.0, 0.0), 0.5);
        let s = TrainState {
            grad_sq_sum: 5.0,
            ..TrainState::default()
        };
        assert!((step_size_adagrad_norm(&s, 1.0, 0.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn step_rule_parsing() {
        assert_eq!(
            "const:0.01".parse::<StepRule>().unwrap(),
            StepRule::Constant { rate: 0.01 }
        );
        assert!(matches!(
            "adagrad:3".parse::<StepRule>().unwrap(),
            StepRule::AdagradNorm { lipschitz_est, .. } if lipschitz_est == 3.0
        ));
        assert!("const:-1".parse::<StepRule>().is_err());
        assert!("adam".parse::<StepRule>().is_err());
        assert_eq!("unsup".parse::<LossKind>().unwrap(), LossKind::Unsupervised);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        // a zero network at X = 0 has zero seed gradient, hence zero G
        let arch = Architecture::new(2, 1, [3, 3, 3]).unwrap();
        let mut params = NetworkParams::zeros(arch);
        let before = params.clone();
        let src = toy_source(4, 1);
        let batch: Vec<_> = (0..4).map(|i| src.sample(i)).collect();
        let cfg = TrainConfig {
            step_rule: StepRule::Constant { rate: 0.1 },
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&params);
        let mut state = TrainState::default();
        trainer.sgd_step(&mut params, &batch, &cfg, &mut state).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn constant_step_is_plain_gradient_descent() {
        let arch = Architecture::new(2, 1, [2, 2, 2]).unwrap();
        let mut params = NetworkParams::init(arch, 3);
        let before = params.clone();
        let src = toy_source(2, 2);
        let batch = vec![src.sample(0)];
        let cfg = TrainConfig {
            step_rule: StepRule::Constant { rate: 0.05 },
            ..TrainConfig::default()
        };
        let g = crate::model::backward(&before, &batch[0].m, &batch[0].l0, cfg.smooth()).unwrap();
        let mut trainer = Trainer::new(&params);
        trainer
            .sgd_step(&mut params, &batch, &cfg, &mut TrainState::default())
            .unwrap();
        for ((t1, t0), gi) in params.theta().iter().zip(before.theta()).zip(&g) {
            assert!((t1 - (t0 - 0.05 * gi)).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_sample_batch_matches_single() {
        let arch = Architecture::new(2, 1, [3, 3, 2]).unwrap();
        let p0 = NetworkParams::init(arch, 4);
        let src = toy_source(1, 3);
        let cfg = TrainConfig {
            step_rule: StepRule::Constant { rate: 0.01 },
            ..TrainConfig::default()
        };
        let one = vec![src.sample(0)];
        let many = vec![src.sample(0); 5];
        let mut t1 = Trainer::new(&p0);
        let mut t5 = Trainer::new(&p0);
        let (mut a, mut b) = (p0.clone(), p0.clone());
        t1.sgd_step(&mut a, &one, &cfg, &mut TrainState::default()).unwrap();
        t5.sgd_step(&mut b, &many, &cfg, &mut TrainState::default()).unwrap();
        for (x, y) in t1.last_gradient().iter().zip(t5.last_gradient()) {
            assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0));
        }
    }

    #[test]
    fn non_finite_gradient_reports_sample() {
        let arch = Architecture::new(2, 1, [2, 2, 2]).unwrap();
        let mut params = NetworkParams::init(arch, 1);
        let src = toy_source(3, 5);
        let mut batch: Vec<_> = (0..3).map(|i| src.sample(i)).collect();
        batch[1].l0 = SymMatrix::diag(&[f64::NAN, 0.0]);
        let cfg = TrainConfig::default();
        let err = Trainer::new(&params)
            .sgd_step(&mut params, &batch, &cfg, &mut TrainState::default())
            .unwrap_err();
        assert!(matches!(err, DeniseError::NonFiniteGradient { step: 0, sample: 1 }));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let arch = Architecture::new(2, 1, [3, 3, 3]).unwrap();
        let p0 = NetworkParams::init(arch, 0);
        let src = toy_source(10, 0);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&p0, &src, None, &cfg).unwrap();
        assert_eq!(out.params, p0);
        assert!(out.report.records.is_empty());
        let ft = finetune(
            &p0,
            &src,
            None,
            &TrainConfig {
                loss: LossKind::Unsupervised,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(ft.params, p0);
        assert!(finetune(&p0, &src, None, &cfg).is_err());
    }

    #[test]
    fn toy_training_reduces_loss_and_is_deterministic() {
        let arch = Architecture::new(2, 1, [8, 6, 4]).unwrap();
        let src = toy_source(500, 7);
        let p0 = NetworkParams::init(arch, 1).with_input_norm(crate::model::InputNorm::fit(&src, 500)).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 10,
            step_rule: StepRule::Constant { rate: 0.01 },
            seed: 3,
            ..TrainConfig::default()
        };
        let idx: Vec<usize> = (0..490).collect();
        let before = mean_loss(&p0, &src, &idx, LossKind::Supervised, cfg.smooth()).unwrap();
        let out = train(&p0, &src, None, &cfg).unwrap();
        let after = mean_loss(&out.params, &src, &idx, LossKind::Supervised, cfg.smooth()).unwrap();
        assert!(after < before, "{before} -> {after}");
        assert_eq!(out.report.records.len(), 50);
        assert!(out.report.records.windows(2).all(|w| w[0].step < w[1].step));

        let again = train(&p0, &src, None, &cfg).unwrap();
        assert_eq!(again.params, out.params);
    }

    #[test]
    fn adagrad_run_is_monotone_and_bounded() {
        let arch = Architecture::new(2, 1, [4, 4, 4]).unwrap();
        let src = toy_source(60, 9);
        let p0 = NetworkParams::init(arch, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            step_rule: StepRule::AdagradNorm {
                lipschitz_est: 2.0,
                eps: 1e-8,
            },
            ..TrainConfig::default()
        };
        let out = train(&p0, &src, None, &cfg).unwrap();
        assert!(out.report.step_sizes_monotone);
        let cap = (16.0f64 + 1e-8).powf(-0.5);
        assert!(out.report.step_sizes.iter().all(|&h| h <= cap));
        assert!(out.report.step_sizes.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn finetune_ignores_low_rank_labels() {
        let arch = Architecture::new(2, 1, [4, 3, 2]).unwrap();
        let p0 = NetworkParams::init(arch, 5);
        let src = toy_source(30, 4);
        let with_labels = Dataset::from_samples(2, true, None, None, (0..30).map(|i| src.sample(i))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scrambled = Dataset::from_samples(
            2,
            true,
            None,
            None,
            (0..30).map(|i| {
                let mut s = src.sample(i);
                s.l0 = SymMatrix::from_lower_fn(2, |_, _| rng.gen_range(-5.0..5.0));
                s
            }),
        )
        .unwrap();
        let zeroed = Dataset::from_samples(
            2,
            false,
            None,
            None,
            (0..30).map(|i| Sample::unlabeled(src.sample(i).m, i)),
        )
        .unwrap();
        let cfg = TrainConfig {
            loss: LossKind::Unsupervised,
            epochs: 2,
            batch_size: 3,
            step_rule: StepRule::Constant { rate: 0.01 },
            ..TrainConfig::default()
        };
        let a = finetune(&p0, &with_labels, None, &cfg).unwrap().params;
        let b = finetune(&p0, &scrambled, None, &cfg).unwrap().params;
        let c = finetune(&p0, &zeroed, None, &cfg).unwrap().params;
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
