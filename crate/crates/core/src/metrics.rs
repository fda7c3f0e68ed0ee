//! Evaluation quantities and their aggregation into result tables.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::SampleSource;
use crate::error::{DeniseError, Result};
use crate::linalg::{sym_eigenvalues, Matrix, SymMatrix, EIGEN_TOL};

pub const DEFAULT_EPS: f64 = 0.01;

/// Number of eigenvalues strictly greater than `eps` (signed).
pub fn approx_rank(l: &SymMatrix, eps: f64) -> Result<usize> {
    Ok(sym_eigenvalues(l, EIGEN_TOL)?.iter().filter(|&&v| v > eps).count())
}

/// Fraction of entries with `|s_ij| < eps`.
pub fn approx_sparsity(s: &Matrix, eps: f64) -> f64 {
    let small = s.as_slice().iter().filter(|v| v.abs() < eps).count();
    small as f64 / s.as_slice().len().max(1) as f64
}

/// Fraction of entries that are exactly zero (ground-truth sparsity).
pub fn exact_sparsity(s: &Matrix) -> f64 {
    let zeros = s.as_slice().iter().filter(|&&v| v == 0.0).count();
    zeros as f64 / s.as_slice().len().max(1) as f64
}

/// `|a - reference|_F / |reference|_F`.
pub fn rel_error(a: &Matrix, reference: &Matrix) -> Result<f64> {
    if a.rows() != reference.rows() || a.cols() != reference.cols() {
        return Err(DeniseError::dim(
            format!("{}x{}", reference.rows(), reference.cols()),
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    let denom = reference.frobenius_norm();
    if denom == 0.0 {
        return Err(DeniseError::ZeroReference);
    }
    Ok((a - reference).frobenius_norm() / denom)
}

/// `|M - L - S|_F / |M|_F`.
pub fn reconstruction_error(m: &Matrix, l: &Matrix, s: &Matrix) -> Result<f64> {
    rel_error(&(l + s), m)
}

/// Per-sample evaluation of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: usize,
    pub r_l: usize,
    pub s_s: f64,
    /// `None` when the sample carries no ground truth (zero `L0`).
    pub rel_err_l: Option<f64>,
    pub rel_err_s: Option<f64>,
    /// `|M - L|_F / |M|_F`.
    pub re_ml: f64,
    pub reconstruction: f64,
    /// Median over the timing repeats; NaN when timing was disabled.
    pub wall_ms: f64,
}

/// Output of a decomposition method: `(L, S)`.
pub type MethodOutput = (SymMatrix, SymMatrix);

/// A named decomposition routine under evaluation.
pub struct Method<'a> {
    pub name: String,
    pub run: Box<dyn Fn(&SymMatrix) -> Result<MethodOutput> + Sync + 'a>,
}

impl<'a> Method<'a> {
    pub fn new(
        name: impl Into<String>,
        run: impl Fn(&SymMatrix) -> Result<MethodOutput> + Sync + 'a,
    ) -> Self {
        Method {
            name: name.into(),
            run: Box::new(run),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub eps: f64,
    /// Timed repeats per matrix (median kept). 0 disables timing and lets
    /// samples run in parallel.
    pub timing_repeats: usize,
    /// Evaluate only the first `limit` samples.
    pub limit: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            eps: DEFAULT_EPS,
            timing_repeats: 3,
            limit: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for a single value).
    pub std: f64,
    pub median: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let count = values.len();
        if count == 0 {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
                median: f64::NAN,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat {
            mean,
            std,
            median: median(values),
            count,
        }
    }

    /// `mean (std)` with two decimals, or `n/a`.
    pub fn display(&self) -> String {
        if self.count == 0 {
            "n/a".into()
        } else {
            format!("{:.2} ({:.2})", self.mean, self.std)
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub records: Vec<EvalRecord>,
    /// Samples whose decomposition returned an error.
    pub failures: usize,
    pub r_l: Stat,
    pub s_s: Stat,
    pub rel_err_l: Stat,
    pub rel_err_s: Stat,
    pub re_ml: Stat,
    pub reconstruction: Stat,
    pub wall_ms: Stat,
}

impl MethodSummary {
    pub fn from_records(name: impl Into<String>, records: Vec<EvalRecord>, failures: usize) -> Self {
        let col = |f: &dyn Fn(&EvalRecord) -> Option<f64>| -> Stat {
            Stat::of(&records.iter().filter_map(f).collect::<Vec<_>>())
        };
        MethodSummary {
            name: name.into(),
            r_l: col(&|r| Some(r.r_l as f64)),
            s_s: col(&|r| Some(r.s_s)),
            rel_err_l: col(&|r| r.rel_err_l),
            rel_err_s: col(&|r| r.rel_err_s),
            re_ml: col(&|r| Some(r.re_ml)),
            reconstruction: col(&|r| Some(r.reconstruction)),
            wall_ms: col(&|r| Some(r.wall_ms).filter(|t| t.is_finite())),
            records,
            failures,
        }
    }

    pub fn failure_rate(&self) -> f64 {
        let total = self.records.len() + self.failures;
        if total == 0 {
            0.0
        } else {
            self.failures as f64 / total as f64
        }
    }
}

fn optional_ratio(a: &Matrix, reference: &Matrix) -> Result<Option<f64>> {
    match rel_error(a, reference) {
        Ok(v) => Ok(Some(v)),
        Err(DeniseError::ZeroReference) => Ok(None),
        Err(e) => Err(e),
    }
}

fn record_for(
    method: &Method<'_>,
    source: &dyn SampleSource,
    index: usize,
    opts: &EvalOptions,
) -> Result<EvalRecord> {
    let sample = source.sample(index);
    let (out, wall_ms) = if opts.timing_repeats == 0 {
        ((method.run)(&sample.m)?, f64::NAN)
    } else {
        let mut times = Vec::with_capacity(opts.timing_repeats);
        let mut out = None;
        for _ in 0..opts.timing_repeats {
            let t = Instant::now();
            let o = (method.run)(&sample.m)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
            out.get_or_insert(o);
        }
        (out.expect("at least one repeat"), median(&times))
    };
    let (l, s) = out;
    if l.n() != sample.m.n() || s.n() != sample.m.n() {
        return Err(DeniseError::dim(sample.m.n(), l.n()));
    }
    let m = sample.m.as_matrix();
    Ok(EvalRecord {
        index: sample.index,
        r_l: approx_rank(&l, opts.eps)?,
        s_s: approx_sparsity(s.as_matrix(), opts.eps),
        rel_err_l: optional_ratio(l.as_matrix(), sample.l0.as_matrix())?,
        rel_err_s: optional_ratio(s.as_matrix(), sample.s0.as_matrix())?,
        re_ml: rel_error(l.as_matrix(), m)?,
        reconstruction: reconstruction_error(m, l.as_matrix(), s.as_matrix())?,
        wall_ms,
    })
}

/// Runs `method` over the source and aggregates the per-sample records.
/// Failed samples are logged, excluded and counted.
pub fn evaluate_method(
    method: &Method<'_>,
    source: &dyn SampleSource,
    opts: &EvalOptions,
) -> Result<MethodSummary> {
    let count = opts.limit.map_or(source.len(), |l| l.min(source.len()));
    if count == 0 {
        return Err(DeniseError::Config("empty evaluation set".into()));
    }
    let results: Vec<Result<EvalRecord>> = if opts.timing_repeats == 0 {
        (0..count)
            .into_par_iter()
            .map(|i| record_for(method, source, i, opts))
            .collect()
    } else {
        (0..count).map(|i| record_for(method, source, i, opts)).collect()
    };
    let mut records = Vec::with_capacity(count);
    let mut failures = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("{}: sample {i} failed: {e}", method.name);
                failures += 1;
            }
        }
    }
    Ok(MethodSummary::from_records(method.name.clone(), records, failures))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// Per-sample results without timings, so that reruns are byte-identical.
pub fn write_results_csv(path: impl AsRef<Path>, summaries: &[MethodSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "index", "r_l", "s_s", "rel_err_l", "rel_err_s", "re_ml", "reconstruction"])?;
    for s in summaries {
        for r in &s.records {
            w.write_record([
                s.name.clone(),
                r.index.to_string(),
                r.r_l.to_string(),
                format!("{:e}", r.s_s),
                opt_cell(r.rel_err_l),
                opt_cell(r.rel_err_s),
                format!("{:e}", r.re_ml),
                format!("{:e}", r.reconstruction),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Markdown table with `mean (std)` cells.
pub fn summary_markdown(title: &str, summaries: &[MethodSummary]) -> String {
    let mut out = format!("# {title}\n\n");
    out.push_str("| Method | r(L) | s(S) | rel.error(L) | rel.error(S) | RE_ML | ‖M−L−S‖/‖M‖ | samples | failures |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {:.2e} | {} | {} |",
            s.name,
            s.r_l.display(),
            s.s_s.display(),
            s.rel_err_l.display(),
            s.rel_err_s.display(),
            s.re_ml.display(),
            s.reconstruction.mean,
            s.records.len(),
            s.failures
        );
    }
    out
}

pub fn write_summary_md(path: impl AsRef<Path>, title: &str, summaries: &[MethodSummary]) -> Result<()> {
    std::fs::write(path, summary_markdown(title, summaries))?;
    Ok(())
}

/// Timing table: mean (std) and median milliseconds per matrix, plus the
/// speedup of `reference` over every method (ratio of mean times).
pub fn timing_markdown(summaries: &[MethodSummary], reference: Option<&str>) -> String {
    let base = reference.and_then(|r| summaries.iter().find(|s| s.name == r)).map(|s| s.wall_ms.mean);
    let mut out = String::from("| Method | time ms mean (std) | median ms | speedup of reference |\n|---|---|---|---|\n");
    for s in summaries {
        let speedup = base.map_or_else(|| "n/a".to_string(), |b| format!("{:.1}", s.wall_ms.mean / b));
        let _ = writeln!(
            out,
            "| {} | {:.3} ({:.3}) | {:.3} | {} |",
            s.name, s.wall_ms.mean, s.wall_ms.std, s.wall_ms.median, speedup
        );
    }
    out
}

pub fn write_timing(
    csv_path: impl AsRef<Path>,
    md_path: impl AsRef<Path>,
    summaries: &[MethodSummary],
    reference: Option<&str>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    writeln!(f, "method,index,wall_ms")?;
    for s in summaries {
        for r in &s.records {
            writeln!(f, "{},{},{}", s.name, r.index, r.wall_ms)?;
        }
    }
    f.flush()?;
    std::fs::write(md_path, timing_markdown(summaries, reference))?;
    Ok(())
}
