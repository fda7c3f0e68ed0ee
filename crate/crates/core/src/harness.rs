//! Orchestration: price ingestion into rolling correlation matrices, lambda
//! calibration, method comparison and reproducible run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, Algorithm, BaselineConfig};
use crate::datagen::{Dataset, GenConfig, SampleSource, SyntheticSource};
use crate::error::{DeniseError, Result};
use crate::linalg::{Matrix, SymMatrix};
use crate::metrics::{self, EvalOptions, Method, MethodSummary};
use crate::model::DeniseModel;

/// Builds the global rayon pool, capped by `DENISE_THREADS` when set.
/// Safe to call more than once; later calls are ignored.
pub fn init_thread_pool() -> Result<Option<usize>> {
    let threads = match std::env::var("DENISE_THREADS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .ok()
                .filter(|&t| t > 0)
                .ok_or_else(|| DeniseError::Config(format!("DENISE_THREADS must be a positive integer, got `{v}`")))?,
        ),
        Err(_) => None,
    };
    if let Some(t) = threads {
        if rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            log::debug!("thread pool already initialised");
        }
    }
    Ok(threads)
}

// ---------------------------------------------------------------------------
// prices

/// Daily closing prices, one column per asset. Missing cells are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceTable {
    pub dates: Vec<String>,
    pub assets: Vec<String>,
    /// `prices[t][a]`.
    pub prices: Vec<Vec<Option<f64>>>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim().to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null")
}

impl PriceTable {
    pub fn read_csv(path: impl AsRef<Path>) -> Result<PriceTable> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let header = reader.headers()?.clone();
        if header.len() < 3 {
            return Err(DeniseError::Parse(format!(
                "{}: need a date column and at least two asset columns",
                path.display()
            )));
        }
        let assets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut prices = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(DeniseError::Parse(format!("row {}: expected {} cells", line + 2, header.len())));
            }
            let mut row = Vec::with_capacity(assets.len());
            for cell in rec.iter().skip(1) {
                if is_missing(cell) {
                    row.push(None);
                    continue;
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| DeniseError::Parse(format!("row {}: bad price `{cell}`", line + 2)))?;
                if !(v > 0.0) || !v.is_finite() {
                    return Err(DeniseError::Parse(format!("row {}: price must be positive, got {v}", line + 2)));
                }
                row.push(Some(v));
            }
            dates.push(rec[0].to_string());
            prices.push(row);
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DeniseError::Parse("dates must be strictly increasing".into()));
        }
        Ok(PriceTable { dates, assets, prices })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.assets.iter().cloned());
        w.write_record(&header)?;
        for (d, row) in self.dates.iter().zip(&self.prices) {
            let mut rec = vec![d.clone()];
            rec.extend(row.iter().map(|p| p.map_or_else(String::new, |v| format!("{v:.4}"))));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Forward-fills gaps of at most `max_fill` consecutive days; longer
    /// gaps (and leading gaps) stay missing.
    pub fn forward_filled(&self, max_fill: usize) -> PriceTable {
        let mut prices = self.prices.clone();
        for a in 0..self.assets.len() {
            let mut last = None;
            let mut run = 0;
            let mut t = 0;
            while t < prices.len() {
                match prices[t][a] {
                    Some(v) => {
                        last = Some(v);
                        run = 0;
                        t += 1;
                    }
                    None => {
                        let start = t;
                        while t < prices.len() && prices[t][a].is_none() {
                            t += 1;
                        }
                        run += t - start;
                        if run <= max_fill {
                            if let Some(v) = last {
                                for row in &mut prices[start..t] {
                                    row[a] = Some(v);
                                }
                            }
                        }
                    }
                }
            }
        }
        PriceTable {
            dates: self.dates.clone(),
            assets: self.assets.clone(),
            prices,
        }
    }
}

/// Days since 1970-01-01 to a civil date.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (yoe + era * 400 + i64::from(m <= 2), m, d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceFixtureConfig {
    pub assets: usize,
    pub days: usize,
    pub factors: usize,
    /// Probability that a single price cell is blanked out.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for PriceFixtureConfig {
    fn default() -> Self {
        PriceFixtureConfig {
            assets: 20,
            days: 2600,
            factors: 3,
            missing_rate: 0.002,
            seed: 2020,
        }
    }
}

/// Synthetic factor-model prices on weekdays from 2000-01-03.
pub fn synthetic_prices(cfg: &PriceFixtureConfig) -> PriceTable {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let loadings: Vec<Vec<f64>> = (0..cfg.assets)
        .map(|_| (0..cfg.factors).map(|_| 0.6 * draw()).collect())
        .collect();
    let idio: Vec<f64> = (0..cfg.assets).map(|_| 0.5 + 0.5 * draw().abs()).collect();
    let mut level: Vec<f64> = (0..cfg.assets).map(|_| (4.0 + 0.5 * draw()).exp()).collect();

    let mut dates = Vec::with_capacity(cfg.days);
    let mut day = 10_959i64; // 2000-01-03
    while dates.len() < cfg.days {
        // 1970-01-01 was a Thursday
        if (day + 3).rem_euclid(7) < 5 {
            let (y, m, d) = civil_from_days(day);
            dates.push(format!("{y:04}-{m:02}-{d:02}"));
        }
        day += 1;
    }

    let mut prices = Vec::with_capacity(cfg.days);
    for _ in 0..cfg.days {
        let f: Vec<f64> = (0..cfg.factors).map(|_| draw()).collect();
        let row: Vec<Option<f64>> = (0..cfg.assets)
            .map(|a| {
                let common: f64 = loadings[a].iter().zip(&f).map(|(l, x)| l * x).sum();
                let r = 0.01 * (common + idio[a] * draw());
                level[a] *= r.exp();
                Some(level[a])
            })
            .collect();
        prices.push(row);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d69_7373);
    for row in prices.iter_mut().skip(1) {
        for cell in row.iter_mut() {
            if rand::Rng::gen_bool(&mut rng, cfg.missing_rate) {
                *cell = None;
            }
        }
    }
    PriceTable {
        dates,
        assets: (0..cfg.assets).map(|a| format!("A{a:02}")).collect(),
        prices,
    }
}

// ---------------------------------------------------------------------------
// ingestion

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnKind {
    Log,
    Simple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub prices_csv: PathBuf,
    /// Daily returns per correlation matrix (each window spans `window + 1`
    /// price rows).
    pub window: usize,
    pub shift: usize,
    pub split_fraction: f64,
    pub returns: ReturnKind,
    /// Longest gap (in days) that is forward-filled.
    pub max_fill: usize,
}

impl IngestConfig {
    pub fn new(prices_csv: impl Into<PathBuf>) -> Self {
        IngestConfig {
            prices_csv: prices_csv.into(),
            window: 252,
            shift: 5,
            split_fraction: 0.77,
            returns: ReturnKind::Log,
            max_fill: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(DeniseError::Config("window must be at least 2".into()));
        }
        if self.shift == 0 {
            return Err(DeniseError::Config("shift must be at least 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(DeniseError::Config("split fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpan {
    /// Index of the first price row.
    pub start: usize,
    pub start_date: String,
    pub end_date: String,
}

#[derive(Clone, Debug)]
pub struct IngestResult {
    pub assets: Vec<String>,
    pub train: Vec<SymMatrix>,
    pub test: Vec<SymMatrix>,
    pub train_windows: Vec<WindowSpan>,
    pub test_windows: Vec<WindowSpan>,
    /// Windows rejected for gaps or zero-variance columns.
    pub rejected: usize,
    /// Test windows dropped because they overlap the last training window.
    pub purged: usize,
}

/// Pearson correlation of the columns of `returns` (`T x p`, row-major), or
/// `None` when a column has zero variance.
pub fn correlation(returns: &[Vec<f64>]) -> Option<SymMatrix> {
    let t = returns.len();
    let p = returns.first()?.len();
    let mut mean = vec![0.0; p];
    for r in returns {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut cov = Matrix::zeros(p, p);
    for r in returns {
        for i in 0..p {
            let di = r[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    let sd: Vec<f64> = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
    if sd.iter().any(|&s| !(s > 0.0)) {
        return None;
    }
    Some(SymMatrix::from_lower_fn(p, |i, j| {
        if i == j {
            1.0
        } else {
            (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    }))
}

/// Rolling-window correlation matrices with a chronological train/test split.
pub fn ingest_correlations(cfg: &IngestConfig) -> Result<IngestResult> {
    cfg.validate()?;
    let table = PriceTable::read_csv(&cfg.prices_csv)?;
    ingest_table(&table, cfg)
}

pub fn ingest_table(table: &PriceTable, cfg: &IngestConfig) -> Result<IngestResult> {
    cfg.validate()?;
    if table.assets.len() < 2 {
        return Err(DeniseError::Parse("need at least two asset columns".into()));
    }
    let rows = table.dates.len();
    if rows < cfg.window + cfg.shift {
        return Err(DeniseError::Config(format!(
            "{rows} price rows are fewer than window + shift = {}",
            cfg.window + cfg.shift
        )));
    }
    let filled = table.forward_filled(cfg.max_fill);
    let mut matrices = Vec::new();
    let mut spans = Vec::new();
    let mut rejected = 0;
    let mut start = 0;
    while start + cfg.window < rows {
        let block = &filled.prices[start..=start + cfg.window];
        let span = WindowSpan {
            start,
            start_date: table.dates[start].clone(),
            end_date: table.dates[start + cfg.window].clone(),
        };
        let complete: Option<Vec<Vec<f64>>> = block
            .iter()
            .map(|row| row.iter().copied().collect::<Option<Vec<f64>>>())
            .collect();
        match complete {
            None => {
                log::warn!("window {}..{}: unfilled gap, dropped", span.start_date, span.end_date);
                rejected += 1;
            }
            Some(p) => {
                let returns: Vec<Vec<f64>> = p
                    .windows(2)
                    .map(|w| {
                        w[0].iter()
                            .zip(&w[1])
                            .map(|(a, b)| match cfg.returns {
                                ReturnKind::Log => (b / a).ln(),
                                ReturnKind::Simple => b / a - 1.0,
                            })
                            .collect()
                    })
                    .collect();
                match correlation(&returns) {
                    Some(c) => {
                        matrices.push(c);
                        spans.push(span);
                    }
                    None => {
                        log::warn!(
                            "window {}..{}: constant price column, dropped",
                            span.start_date,
                            span.end_date
                        );
                        rejected += 1;
                    }
                }
            }
        }
        start += cfg.shift;
    }
    if matrices.is_empty() {
        return Err(DeniseError::Config("no usable windows".into()));
    }
    let n_train = ((matrices.len() as f64) * cfg.split_fraction).floor() as usize;
    let n_train = n_train.clamp(1, matrices.len());
    let mut test = matrices.split_off(n_train);
    let mut test_windows = spans.split_off(n_train);
    let last_end = spans.last().map(|s| s.start + cfg.window).unwrap_or(0);
    let keep = test_windows.iter().position(|s| s.start > last_end).unwrap_or(test_windows.len());
    let purged = keep;
    test.drain(..keep);
    test_windows.drain(..keep);
    Ok(IngestResult {
        assets: table.assets.clone(),
        train: matrices,
        test,
        train_windows: spans,
        test_windows,
        rejected,
        purged,
    })
}

// ---------------------------------------------------------------------------
// lambda calibration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub target_rank: f64,
    /// Accepted gap between the achieved mean rank and the target.
    pub rank_tol: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Bisection stops once `hi / lo` falls below this.
    pub ratio_tol: f64,
    pub eps: f64,
}

impl CalibrationConfig {
    pub fn new(target_rank: f64) -> Self {
        CalibrationConfig {
            target_rank,
            rank_tol: 0.1,
            lambda_lo: 1e-3,
            lambda_hi: 10.0,
            ratio_tol: 1.02,
            eps: metrics::DEFAULT_EPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: f64,
    pub mean_rank: f64,
    /// Every `(lambda, mean rank)` pair evaluated, in order.
    pub evaluations: Vec<(f64, f64)>,
}

/// Mean approximated rank of the baseline's `L` over `samples`.
pub fn mean_rank(algo: Algorithm, samples: &[SymMatrix], base: &BaselineConfig, lambda: f64, eps: f64) -> Result<f64> {
    let cfg = BaselineConfig { lambda, ..base.clone() };
    let ranks: Vec<usize> = samples
        .par_iter()
        .map(|m| {
            let r = baselines::run(algo, m.as_matrix(), &cfg)?;
            metrics::approx_rank(&r.l_sym()?, eps)
        })
        .collect::<Result<_>>()?;
    Ok(ranks.iter().sum::<usize>() as f64 / ranks.len() as f64)
}

/// Smallest lambda whose mean rank reaches `target - rank_tol`, found by
/// bisection in log space. A larger lambda makes `S` costlier and raises the
/// rank of `L`, so this is the sparsest setting that attains the target.
pub fn calibrate_lambda(
    algo: Algorithm,
    samples: &[SymMatrix],
    base: &BaselineConfig,
    cfg: &CalibrationConfig,
) -> Result<Calibration> {
    if algo == Algorithm::Fpcp {
        return Err(DeniseError::Config("calibration applies to pcp and ialm".into()));
    }
    if samples.is_empty() {
        return Err(DeniseError::Config("calibration needs at least one matrix".into()));
    }
    if !(cfg.lambda_lo > 0.0 && cfg.lambda_lo < cfg.lambda_hi) || !(cfg.ratio_tol > 1.0) {
        return Err(DeniseError::Config("invalid calibration bracket".into()));
    }
    let slack = 1e-9;
    let goal = cfg.target_rank - cfg.rank_tol - slack;
    let mut evaluations = Vec::new();
    let mut eval = |lambda: f64| -> Result<f64> {
        let r = mean_rank(algo, samples, base, lambda, cfg.eps)?;
        log::info!("calibration: lambda {lambda:.5} -> mean rank {r:.3}");
        evaluations.push((lambda, r));
        Ok(r)
    };
    let (mut lo, mut hi) = (cfg.lambda_lo, cfg.lambda_hi);
    let r_lo = eval(lo)?;
    let mut r_hi = eval(hi)?;
    if r_lo >= goal {
        return Err(DeniseError::Calibration(format!(
            "mean rank {r_lo:.2} at lambda {lo} already reaches {goal:.2}; lower the bracket"
        )));
    }
    if r_hi < goal {
        return Err(DeniseError::Calibration(format!(
            "mean rank {r_hi:.2} at lambda {hi} stays below {goal:.2}; raise the bracket"
        )));
    }
    while hi / lo > cfg.ratio_tol {
        let mid = (lo * hi).sqrt();
        let r = eval(mid)?;
        if r >= goal {
            hi = mid;
            r_hi = r;
        } else {
            lo = mid;
        }
    }
    if (r_hi - cfg.target_rank).abs() > cfg.rank_tol + slack {
        return Err(DeniseError::Calibration(format!(
            "mean rank jumps past the target: {r_hi:.2} at lambda {hi:.5}"
        )));
    }
    Ok(Calibration {
        lambda: hi,
        mean_rank: r_hi,
        evaluations,
    })
}

// ---------------------------------------------------------------------------
// comparison

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Synthetic { config: GenConfig },
    File { path: PathBuf },
}

impl DataSpec {
    fn load(&self) -> Result<Box<dyn SampleSource>> {
        Ok(match self {
            DataSpec::Synthetic { config } => Box::new(SyntheticSource::new(config.clone())?),
            DataSpec::File { path } => Box::new(Dataset::read(path)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub target_rank: f64,
    /// Number of leading samples used for calibration.
    pub subsample: usize,
    #[serde(default)]
    pub lambda_lo: Option<f64>,
    #[serde(default)]
    pub lambda_hi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Denise {
        name: String,
        model: PathBuf,
    },
    Baseline {
        #[serde(default)]
        name: Option<String>,
        algo: Algorithm,
        config: BaselineConfig,
        #[serde(default)]
        calibrate: Option<CalibrationSpec>,
    },
    /// Returns the ground truth `(L0, S0)`.
    Oracle,
    /// Returns `(0, M)`.
    Zero,
}

impl MethodSpec {
    pub fn name(&self) -> String {
        match self {
            MethodSpec::Denise { name, .. } => name.clone(),
            MethodSpec::Baseline { name, algo, .. } => name.clone().unwrap_or_else(|| algo.name().to_string()),
            MethodSpec::Oracle => "Oracle".into(),
            MethodSpec::Zero => "Zero".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RL,
    SS,
    RelErrL,
    RelErrS,
    ReMl,
    Reconstruction,
}

impl Metric {
    fn of(&self, s: &MethodSummary) -> f64 {
        match self {
            Metric::RL => s.r_l.mean,
            Metric::SS => s.s_s.mean,
            Metric::RelErrL => s.rel_err_l.mean,
            Metric::RelErrS => s.rel_err_s.mean,
            Metric::ReMl => s.re_ml.mean,
            Metric::Reconstruction => s.reconstruction.mean,
        }
    }
}

/// A threshold on a method's mean metric, e.g. `Denise:rel_err_l<=0.45`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub method: String,
    pub metric: Metric,
    pub at_most: Option<f64>,
    pub at_least: Option<f64>,
}

impl std::str::FromStr for Assertion {
    type Err = DeniseError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || DeniseError::Config(format!("assertion `{s}` is not METHOD:METRIC<=X or >=X"));
        let (method, rest) = s.split_once(':').ok_or_else(bad)?;
        let (metric, op, value) = if let Some((m, v)) = rest.split_once("<=") {
            (m, true, v)
        } else if let Some((m, v)) = rest.split_once(">=") {
            (m, false, v)
        } else {
            return Err(bad());
        };
        let metric: Metric = serde_json::from_value(serde_json::Value::String(metric.trim().into())).map_err(|_| bad())?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        Ok(Assertion {
            method: method.trim().into(),
            metric,
            at_most: op.then_some(value),
            at_least: (!op).then_some(value),
        })
    }
}

impl Assertion {
    pub fn check(&self, summaries: &[MethodSummary]) -> AssertionOutcome {
        let value = summaries
            .iter()
            .find(|s| s.name == self.method)
            .map(|s| self.metric.of(s));
        let passed = value.is_some_and(|v| {
            self.at_most.map_or(true, |m| v <= m) && self.at_least.map_or(true, |m| v >= m)
        });
        AssertionOutcome {
            assertion: self.clone(),
            value,
            passed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssertionOutcome {
    pub assertion: Assertion,
    pub value: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub title: String,
    pub data: DataSpec,
    pub methods: Vec<MethodSpec>,
    pub eval: EvalOptions,
    /// Baselines are evaluated on at most this many leading samples.
    #[serde(default)]
    pub baseline_limit: Option<usize>,
    /// Method whose mean time is the speedup reference.
    #[serde(default)]
    pub timing_reference: Option<String>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
    /// A method failing on more than this fraction of samples fails the run.
    pub max_failure_rate: f64,
}

#[derive(Clone, Debug)]
pub struct CompareOutcome {
    pub summaries: Vec<MethodSummary>,
    pub calibrations: BTreeMap<String, Calibration>,
    pub assertions: Vec<AssertionOutcome>,
    pub manifest: RunManifest,
}

impl CompareOutcome {
    pub fn assertions_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

/// SHA-256 of a file as lowercase hex.
pub fn hash_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn sym_pair(r: baselines::BaselineResult) -> Result<(SymMatrix, SymMatrix)> {
    Ok((r.l_sym()?, r.s_sym()?))
}

/// Deterministic output files of `compare` (hashed in the manifest).
pub const HASHED_OUTPUTS: [&str; 3] = ["results.csv", "summary.md", "calibration.json"];

/// Evaluates every method on the same data and writes `results.csv`,
/// `summary.md`, `calibration.json`, `timing.csv`, `timing.md` and
/// `manifest.json` into `out_dir`.
pub fn compare(cfg: &CompareConfig, out_dir: impl AsRef<Path>) -> Result<CompareOutcome> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    if cfg.methods.is_empty() {
        return Err(DeniseError::Config("no methods to compare".into()));
    }
    let source = cfg.data.load()?;
    let total = cfg.eval.limit.map_or(source.len(), |l| l.min(source.len()));
    if total == 0 {
        return Err(DeniseError::Config("empty dataset".into()));
    }

    let mut inputs = BTreeMap::new();
    if let DataSpec::File { path } = &cfg.data {
        inputs.insert(path.display().to_string(), hash_file(path)?);
    }

    let mut summaries = Vec::new();
    let mut calibrations = BTreeMap::new();
    for spec in &cfg.methods {
        let name = spec.name();
        log::info!("evaluating {name}");
        let mut opts = cfg.eval.clone();
        let summary = match spec {
            MethodSpec::Denise { model, .. } => {
                inputs.insert(model.display().to_string(), hash_file(model)?);
                let model = DeniseModel::load(model)?;
                if model.params.arch().n != source.dim() {
                    return Err(DeniseError::dim(source.dim(), model.params.arch().n));
                }
                let method = Method::new(&name, |m: &SymMatrix| {
                    let d = model.decompose(m)?;
                    Ok((d.l, d.s))
                });
                metrics::evaluate_method(&method, source.as_ref(), &opts)?
            }
            MethodSpec::Baseline {
                algo,
                config,
                calibrate,
                ..
            } => {
                let mut bcfg = config.clone();
                if let Some(c) = calibrate {
                    let samples: Vec<SymMatrix> = (0..c.subsample.min(source.len()))
                        .map(|i| source.sample(i).m)
                        .collect();
                    let mut cc = CalibrationConfig::new(c.target_rank);
                    cc.lambda_lo = c.lambda_lo.unwrap_or(cc.lambda_lo);
                    cc.lambda_hi = c.lambda_hi.unwrap_or(cc.lambda_hi);
                    let cal = calibrate_lambda(*algo, &samples, &bcfg, &cc)?;
                    bcfg.lambda = cal.lambda;
                    calibrations.insert(name.clone(), cal);
                }
                if let Some(b) = cfg.baseline_limit {
                    opts.limit = Some(opts.limit.map_or(b, |l| l.min(b)));
                }
                let algo = *algo;
                let method = Method::new(&name, move |m: &SymMatrix| sym_pair(baselines::run(algo, m.as_matrix(), &bcfg)?));
                metrics::evaluate_method(&method, source.as_ref(), &opts)?
            }
            MethodSpec::Oracle => {
                let src = source.as_ref();
                let run = |m: &SymMatrix| -> Result<(SymMatrix, SymMatrix)> {
                    (0..total)
                        .map(|i| src.sample(i))
                        .find(|s| s.m == *m)
                        .map(|s| (s.l0, s.s0))
                        .ok_or_else(|| DeniseError::Config("oracle: unknown matrix".into()))
                };
                metrics::evaluate_method(&Method::new(&name, run), src, &opts)?
            }
            MethodSpec::Zero => {
                let method = Method::new(&name, |m: &SymMatrix| Ok((SymMatrix::zeros(m.n()), m.clone())));
                metrics::evaluate_method(&method, source.as_ref(), &opts)?
            }
        };
        if summary.failure_rate() > cfg.max_failure_rate {
            return Err(DeniseError::MethodFailed {
                method: name,
                failures: summary.failures,
                total: summary.failures + summary.records.len(),
            });
        }
        summaries.push(summary);
    }

    metrics::write_results_csv(out_dir.join("results.csv"), &summaries)?;
    metrics::write_summary_md(out_dir.join("summary.md"), &cfg.title, &summaries)?;
    fs::write(out_dir.join("calibration.json"), serde_json::to_string_pretty(&calibrations)?)?;
    metrics::write_timing(
        out_dir.join("timing.csv"),
        out_dir.join("timing.md"),
        &summaries,
        cfg.timing_reference.as_deref(),
    )?;

    let assertions: Vec<AssertionOutcome> = cfg.assertions.iter().map(|a| a.check(&summaries)).collect();
    let mut outputs = BTreeMap::new();
    for name in HASHED_OUTPUTS {
        outputs.insert(name.to_string(), hash_file(out_dir.join(name))?);
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "compare".into(),
        config: cfg.clone(),
        threads: std::env::var("DENISE_THREADS").ok().and_then(|v| v.parse().ok()),
        inputs,
        outputs,
        out_dir: out_dir.to_path_buf(),
    };
    manifest.write(out_dir.join("manifest.json"))?;
    Ok(CompareOutcome {
        summaries,
        calibrations,
        assertions,
        manifest,
    })
}

/// Everything needed to repeat a `compare` run: the full configuration
/// (seeds live inside it), tool version, input hashes and the hashes of the
/// deterministic outputs. Timing files are not hashed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: CompareConfig,
    pub threads: Option<usize>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub out_dir: PathBuf,
}

impl RunManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<RunManifest> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerunReport {
    /// Output files whose hash differs from the manifest.
    pub mismatches: Vec<String>,
    pub manifest: RunManifest,
}

impl RerunReport {
    pub fn identical(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Re-executes a manifest into `out_dir` and compares output hashes.
/// Fails up front when an input file changed.
pub fn rerun(manifest: &RunManifest, out_dir: impl AsRef<Path>) -> Result<RerunReport> {
    for (path, hash) in &manifest.inputs {
        let now = hash_file(path)?;
        if &now != hash {
            return Err(DeniseError::Config(format!("input {path} changed since the recorded run")));
        }
    }
    let outcome = compare(&manifest.config, out_dir)?;
    let mismatches = manifest
        .outputs
        .iter()
        .filter(|(name, hash)| outcome.manifest.outputs.get(*name) != Some(hash))
        .map(|(name, _)| name.clone())
        .collect();
    Ok(RerunReport {
        mismatches,
        manifest: outcome.manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: Vec<Vec<Option<f64>>>) -> PriceTable {
        let rows = cols[0].len();
        PriceTable {
            dates: (0..rows).map(|t| format!("2001-{:03}", t)).collect(),
            assets: (0..cols.len()).map(|a| format!("X{a}")).collect(),
            prices: (0..rows).map(|t| cols.iter().map(|c| c[t]).collect()).collect(),
        }
    }

    fn cfg(window: usize, shift: usize) -> IngestConfig {
        IngestConfig {
            window,
            shift,
            ..IngestConfig::new("unused.csv")
        }
    }

    #[test]
    fn civil_dates() {
        assert_eq!(civil_from_days(0), (1970, 1, 1));
        assert_eq!(civil_from_days(10_959), (2000, 1, 3));
        assert_eq!(civil_from_days(11_016), (2000, 2, 29));
    }

    #[test]
    fn perfectly_correlated_prices() {
        let a: Vec<Option<f64>> = (0..40).map(|t| Some(100.0 * (1.0 + 0.01 * ((t * 7 % 5) as f64)))).collect();
        let b: Vec<Option<f64>> = a.iter().map(|p| p.map(|v| 3.0 * v)).collect();
        let out = ingest_table(&table(vec![a, b]), &cfg(10, 5)).unwrap();
        for m in out.train.iter().chain(&out.test) {
            for i in 0..2 {
                for j in 0..2 {
                    assert!((m.get(i, j) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn independent_noise_is_nearly_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut walk = |_: usize| {
            let mut p = 100.0;
            (0..1001)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    p *= (0.01 * z).exp();
                    Some(p)
                })
                .collect::<Vec<_>>()
        };
        let t = table((0..4).map(&mut walk).collect());
        let c = IngestConfig {
            split_fraction: 0.5,
            ..cfg(1000, 1)
        };
        let out = ingest_table(&t, &c).unwrap();
        let m = &out.train[0];
        for i in 0..4 {
            assert_eq!(m.get(i, i), 1.0);
            for j in 0..i {
                assert!(m.get(i, j).abs() < 0.1, "{}", m.get(i, j));
            }
        }
    }

    #[test]
    fn fixture_windows_split_and_gaps() {
        let fixture = synthetic_prices(&PriceFixtureConfig {
            days: 700,
            ..PriceFixtureConfig::default()
        });
        let out = ingest_table(&fixture, &cfg(60, 5)).unwrap();
        assert!(!out.train.is_empty() && !out.test.is_empty());
        for m in out.train.iter().chain(&out.test) {
            assert_eq!(m.n(), 20);
            for i in 0..20 {
                assert!((m.get(i, i) - 1.0).abs() <= 1e-12);
            }
        }
        let last_train_end = &out.train_windows.last().unwrap().end_date;
        let first_test_start = &out.test_windows.first().unwrap().start_date;
        assert!(last_train_end < first_test_start);
        assert!(out.purged > 0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        fixture.write_csv(&path).unwrap();
        let back = PriceTable::read_csv(&path).unwrap();
        assert_eq!(back.dates, fixture.dates);
        assert_eq!(back.prices.iter().flatten().filter(|p| p.is_none()).count(),
                   fixture.prices.iter().flatten().filter(|p| p.is_none()).count());
    }

    #[test]
    fn long_gap_drops_window_and_constant_column_rejected() {
        let mut a: Vec<Option<f64>> = (0..30).map(|t| Some(10.0 + (t % 3) as f64)).collect();
        let b: Vec<Option<f64>> = (0..30).map(|t| Some(20.0 + (t % 4) as f64)).collect();
        for cell in &mut a[3..10] {
            *cell = None;
        }
        let out = ingest_table(&table(vec![a.clone(), b.clone()]), &cfg(5, 5)).unwrap();
        assert!(out.rejected >= 1);

        let flat: Vec<Option<f64>> = vec![Some(5.0); 30];
        let err = ingest_table(&table(vec![flat, b]), &cfg(5, 5));
        assert!(err.is_err());
    }

    #[test]
    fn short_gap_is_filled() {
        let t = table(vec![vec![Some(1.0), None, None, Some(2.0)], vec![Some(1.0); 4]]);
        let f = t.forward_filled(2);
        assert_eq!(f.prices[2][0], Some(1.0));
        let f = t.forward_filled(1);
        assert_eq!(f.prices[1][0], None);
    }

    #[test]
    fn ingest_validates() {
        assert!(ingest_table(&table(vec![vec![Some(1.0); 10], vec![Some(1.0); 10]]), &cfg(20, 5)).is_err());
        assert!(IngestConfig { window: 1, ..cfg(1, 1) }.validate().is_err());
        assert!(IngestConfig { split_fraction: 1.0, ..cfg(5, 1) }.validate().is_err());
    }

    #[test]
    fn assertion_parsing() {
        let a: Assertion = "Denise:rel_err_l<=0.45".parse().unwrap();
        assert_eq!(a.metric, Metric::RelErrL);
        assert_eq!(a.at_most, Some(0.45));
        let b: Assertion = "PCP: r_l >= 2.8".parse().unwrap();
        assert_eq!(b.at_least, Some(2.8));
        assert!("nonsense".parse::<Assertion>().is_err());
        assert!("X:bogus<=1".parse::<Assertion>().is_err());
    }
}
