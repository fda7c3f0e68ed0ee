//! Classical robust PCA solvers: PCP (exact augmented Lagrangian with inner
//! alternation), IALM (one alternation per multiplier update) and FPCP
//! (rank-constrained alternating minimization).

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DeniseError, Result};
use crate::linalg::{svd, Matrix, SymMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pcp,
    Ialm,
    Fpcp,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Pcp => "PCP",
            Algorithm::Ialm => "IALM",
            Algorithm::Fpcp => "FPCP",
        }
    }
}

impl FromStr for Algorithm {
    type Err = DeniseError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pcp" => Ok(Algorithm::Pcp),
            "ialm" => Ok(Algorithm::Ialm),
            "fpcp" => Ok(Algorithm::Fpcp),
            other => Err(DeniseError::Config(format!("unknown baseline `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub lambda: f64,
    /// Required by FPCP, ignored by the convex solvers.
    pub target_rank: Option<usize>,
    /// Tolerance on `|M - L - S|_F / |M|_F` (PCP, IALM) or on the relative
    /// change of `L` between sweeps (FPCP).
    pub tol: f64,
    /// Cap on the number of SVDs.
    pub max_iters: usize,
    /// PCP inner alternation stops once the relative change of `(L, S)`
    /// drops below this.
    pub inner_tol: f64,
    /// Initial penalty is `mu_scale / |M|_2`.
    pub mu_scale: f64,
    /// Geometric penalty growth; `None` selects 1.6 for PCP and 1.1 for IALM.
    pub mu_growth: Option<f64>,
    /// Record augmented Lagrangian values around every block step.
    pub trace: bool,
}

impl BaselineConfig {
    pub fn new(lambda: f64) -> Self {
        BaselineConfig {
            lambda,
            target_rank: None,
            tol: 1e-7,
            max_iters: 10_000,
            inner_tol: 1e-6,
            mu_scale: 1.25,
            mu_growth: None,
            trace: false,
        }
    }

    /// `lambda = 1/sqrt(n)`.
    pub fn standard(n: usize) -> Self {
        BaselineConfig::new(1.0 / (n as f64).sqrt())
    }

    pub fn with_rank(mut self, r: usize) -> Self {
        self.target_rank = Some(r);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(DeniseError::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(DeniseError::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(DeniseError::Config("max_iters must be at least 1".into()));
        }
        if !(self.inner_tol > 0.0) {
            return Err(DeniseError::Config("inner_tol must be > 0".into()));
        }
        if !(self.mu_scale > 0.0) {
            return Err(DeniseError::Config("mu_scale must be > 0".into()));
        }
        if let Some(g) = self.mu_growth {
            if !(g >= 1.0) {
                return Err(DeniseError::Config(format!("mu_growth must be >= 1, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineResult {
    pub l: Matrix,
    pub s: Matrix,
    /// Number of SVDs performed.
    pub iters: usize,
    pub converged: bool,
    /// `|M - L - S|_F / |M|_F` at exit.
    pub residual: f64,
    pub wall_ms: f64,
    /// `(before, after)` augmented Lagrangian values per block step, with
    /// the multiplier and penalty held fixed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lagrangian_trace: Vec<(f64, f64)>,
}

impl BaselineResult {
    pub fn l_sym(&self) -> Result<SymMatrix> {
        SymMatrix::symmetrize(&self.l)
    }

    pub fn s_sym(&self) -> Result<SymMatrix> {
        SymMatrix::symmetrize(&self.s)
    }

    /// True when every recorded block step did not increase the augmented
    /// Lagrangian by more than `slack` (relative to its magnitude).
    pub fn lagrangian_monotone(&self, slack: f64) -> bool {
        self.lagrangian_trace
            .iter()
            .all(|&(before, after)| after <= before + slack * before.abs().max(1.0))
    }
}

/// `sign(x) max(|x| - tau, 0)`.
pub fn shrink(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

pub fn shrink_matrix(a: &Matrix, tau: f64) -> Matrix {
    a.map(|x| shrink(x, tau))
}

/// Singular value thresholding `U shrink(S, tau) V^T`.
pub fn svt(a: &Matrix, tau: f64) -> Result<Matrix> {
    Ok(svt_with_norm(a, tau)?.0)
}

/// SVT together with the nuclear norm of the result.
fn svt_with_norm(a: &Matrix, tau: f64) -> Result<(Matrix, f64)> {
    let d = svd(a)?;
    let nuclear = d.singular_values.iter().map(|&s| shrink(s, tau)).sum();
    Ok((d.reconstruct_with(|_, s| shrink(s, tau)), nuclear))
}

fn check_square(m: &Matrix) -> Result<()> {
    if m.rows() != m.cols() || !m.is_finite() {
        return Err(DeniseError::dim("finite square matrix", format!("{}x{}", m.rows(), m.cols())));
    }
    Ok(())
}

/// Shared state of the two augmented Lagrangian solvers.
struct Alm<'a> {
    m: &'a Matrix,
    lambda: f64,
    l: Matrix,
    s: Matrix,
    y: Matrix,
    mu: f64,
    l_nuclear: f64,
    m_norm: f64,
    svds: usize,
    trace: Option<Vec<(f64, f64)>>,
}

impl<'a> Alm<'a> {
    fn new(m: &'a Matrix, cfg: &BaselineConfig) -> Result<Self> {
        let n = m.rows();
        let spectral = m.spectral_norm()?;
        let dual = spectral.max(m.max_abs() / cfg.lambda);
        Ok(Alm {
            m,
            lambda: cfg.lambda,
            l: Matrix::zeros(n, n),
            s: Matrix::zeros(n, n),
            y: m.scale(1.0 / dual),
            mu: cfg.mu_scale / spectral,
            l_nuclear: 0.0,
            m_norm: m.frobenius_norm(),
            svds: 0,
            trace: cfg.trace.then(Vec::new),
        })
    }

    fn residual(&self) -> Matrix {
        &(self.m - &self.l) - &self.s
    }

    fn lagrangian(&self) -> f64 {
        let r = self.residual();
        let inner: f64 = self.y.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum();
        let sq: f64 = r.as_slice().iter().map(|x| x * x).sum();
        self.l_nuclear + self.lambda * self.s.l1_norm() + inner + 0.5 * self.mu * sq
    }

    fn traced(&mut self, step: impl FnOnce(&mut Self) -> Result<()>) -> Result<()> {
        let before = self.trace.is_some().then(|| self.lagrangian());
        step(self)?;
        if let Some(b) = before {
            let after = self.lagrangian();
            self.trace.as_mut().expect("trace enabled").push((b, after));
        }
        Ok(())
    }

    fn update_l(&mut self) -> Result<()> {
        self.traced(|a| {
            let target = &(a.m - &a.s) + &a.y.scale(1.0 / a.mu);
            let (l, nuclear) = svt_with_norm(&target, 1.0 / a.mu)?;
            a.l = l;
            a.l_nuclear = nuclear;
            a.svds += 1;
            Ok(())
        })
    }

    fn update_s(&mut self) -> Result<()> {
        self.traced(|a| {
            let target = &(a.m - &a.l) + &a.y.scale(1.0 / a.mu);
            a.s = shrink_matrix(&target, a.lambda / a.mu);
            Ok(())
        })
    }

    /// Dual ascent; returns the relative residual before the update.
    fn update_multiplier(&mut self, growth: f64, mu_max: f64) -> f64 {
        let r = self.residual();
        let rel = r.frobenius_norm() / self.m_norm;
        self.y = &self.y + &r.scale(self.mu);
        self.mu = (self.mu * growth).min(mu_max);
        rel
    }

    fn finish(self, converged: bool, started: Instant) -> BaselineResult {
        let residual = self.residual().frobenius_norm() / self.m_norm;
        BaselineResult {
            l: self.l,
            s: self.s,
            iters: self.svds,
            converged,
            residual,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            lagrangian_trace: self.trace.unwrap_or_default(),
        }
    }
}

fn zero_result(n: usize, started: Instant) -> BaselineResult {
    BaselineResult {
        l: Matrix::zeros(n, n),
        s: Matrix::zeros(n, n),
        iters: 1,
        converged: true,
        residual: 0.0,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        lagrangian_trace: Vec::new(),
    }
}

const MU_MAX_FACTOR: f64 = 1e7;

/// Principal component pursuit: `min |L|_* + lambda |S|_1` s.t. `M = L + S`,
/// solved by the exact augmented Lagrangian method. Each multiplier update
/// is preceded by L/S alternation until the block iterates settle.
pub fn pcp(m: &Matrix, cfg: &BaselineConfig) -> Result<BaselineResult> {
    cfg.validate()?;
    check_square(m)?;
    let started = Instant::now();
    if m.max_abs() == 0.0 {
        return Ok(zero_result(m.rows(), started));
    }
    let growth = cfg.mu_growth.unwrap_or(1.6);
    let mut alm = Alm::new(m, cfg)?;
    let mu_max = alm.mu * MU_MAX_FACTOR;
    loop {
        loop {
            let (l_prev, s_prev) = (alm.l.clone(), alm.s.clone());
            alm.update_l()?;
            alm.update_s()?;
            let change = ((&alm.l - &l_prev).frobenius_norm() + (&alm.s - &s_prev).frobenius_norm())
                / alm.m_norm;
            if change <= cfg.inner_tol.max(cfg.tol) || alm.svds >= cfg.max_iters {
                break;
            }
        }
        let rel = alm.update_multiplier(growth, mu_max);
        if rel <= cfg.tol {
            return Ok(alm.finish(true, started));
        }
        if alm.svds >= cfg.max_iters {
            let ok = alm.residual().frobenius_norm() / alm.m_norm <= cfg.tol;
            return Ok(alm.finish(ok, started));
        }
    }
}

/// Inexact augmented Lagrangian method: a single S then L update per
/// multiplier step.
pub fn ialm(m: &Matrix, cfg: &BaselineConfig) -> Result<BaselineResult> {
    cfg.validate()?;
    check_square(m)?;
    let started = Instant::now();
    if m.max_abs() == 0.0 {
        return Ok(zero_result(m.rows(), started));
    }
    let growth = cfg.mu_growth.unwrap_or(1.1);
    let mut alm = Alm::new(m, cfg)?;
    let mu_max = alm.mu * MU_MAX_FACTOR;
    while alm.svds < cfg.max_iters {
        alm.update_s()?;
        alm.update_l()?;
        if alm.update_multiplier(growth, mu_max) <= cfg.tol {
            return Ok(alm.finish(true, started));
        }
    }
    let ok = alm.residual().frobenius_norm() / alm.m_norm <= cfg.tol;
    Ok(alm.finish(ok, started))
}

/// Rank-constrained alternating minimization of
/// `1/2 |M - L - S|_F^2 + lambda |S|_1` s.t. `rank(L) <= r`.
pub fn fpcp(m: &Matrix, cfg: &BaselineConfig) -> Result<BaselineResult> {
    cfg.validate()?;
    check_square(m)?;
    let n = m.rows();
    let r = cfg
        .target_rank
        .ok_or_else(|| DeniseError::Config("fpcp needs a target rank".into()))?;
    if r == 0 || r > n {
        return Err(DeniseError::Config(format!("target rank must be in 1..={n}, got {r}")));
    }
    let started = Instant::now();
    if m.max_abs() == 0.0 {
        return Ok(zero_result(n, started));
    }
    let m_norm = m.frobenius_norm();
    let mut l = Matrix::zeros(n, n);
    let mut s = Matrix::zeros(n, n);
    let mut iters = 0;
    let mut converged = false;
    while iters < cfg.max_iters {
        let next = svd(&(m - &s))?.truncated(r);
        iters += 1;
        let change = (&next - &l).frobenius_norm() / m_norm;
        l = next;
        s = shrink_matrix(&(m - &l), cfg.lambda);
        if change <= cfg.tol {
            converged = true;
            break;
        }
    }
    let residual = (&(m - &l) - &s).frobenius_norm() / m_norm;
    Ok(BaselineResult {
        l,
        s,
        iters,
        converged,
        residual,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        lagrangian_trace: Vec::new(),
    })
}

pub fn run(algo: Algorithm, m: &Matrix, cfg: &BaselineConfig) -> Result<BaselineResult> {
    match algo {
        Algorithm::Pcp => pcp(m, cfg),
        Algorithm::Ialm => ialm(m, cfg),
        Algorithm::Fpcp => fpcp(m, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{FactorDistribution, GenConfig, SampleSource, SyntheticSource};
    use crate::linalg::sym_eigenvalues;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rank_one_plus_spike(n: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l0 = Matrix::from_fn(n, n, |i, j| u[i] * u[j]);
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let mut m = l0.clone();
        m[(i, j)] += 1.0;
        if i != j {
            m[(j, i)] += 1.0;
        }
        (m, l0)
    }

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        (&a + &a.transpose()).scale(0.5)
    }

    #[test]
    fn shrink_examples() {
        assert_eq!(shrink(1.5, 1.0), 0.5);
        assert_eq!(shrink(-0.3, 0.5), 0.0);
        assert_eq!(shrink(-2.0, 0.5), -1.5);
        assert_eq!(shrink(0.7, 0.0), 0.7);
    }

    #[test]
    fn svt_examples() {
        let out = svt(&Matrix::diag(&[4.0, 2.0]), 3.0).unwrap();
        assert!((&out - &Matrix::diag(&[1.0, 0.0])).max_abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Matrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        assert!((&svt(&a, 0.0).unwrap() - &a).max_abs() < 1e-8);
        let top = a.spectral_norm().unwrap();
        assert!(svt(&a, top).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn zero_input() {
        let z = Matrix::zeros(4, 4);
        let cfg = BaselineConfig::standard(4).with_rank(2);
        for algo in [Algorithm::Pcp, Algorithm::Ialm, Algorithm::Fpcp] {
            let r = run(algo, &z, &cfg).unwrap();
            assert_eq!(r.l.max_abs(), 0.0);
            assert_eq!(r.s.max_abs(), 0.0);
            assert_eq!(r.iters, 1);
            assert!(r.converged);
        }
    }

    #[test]
    fn pcp_recovers_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 8;
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = Matrix::from_fn(n, n, |i, j| u[i] * u[j]);
        let r = pcp(&m, &BaselineConfig::standard(n)).unwrap();
        assert!(r.converged);
        assert!((&r.l - &m).frobenius_norm() / m.frobenius_norm() <= 1e-2);
        assert!(r.s.max_abs() < 1e-2);
    }

    #[test]
    fn pcp_separates_spike() {
        for seed in 0..5 {
            let (m, l0) = rank_one_plus_spike(10, seed);
            let r = pcp(&m, &BaselineConfig::standard(10)).unwrap();
            let err = (&r.l - &l0).frobenius_norm() / l0.frobenius_norm();
            assert!(err <= 1e-2, "seed {seed}: {err}");
            assert!(r.residual <= 1e-7);
        }
    }

    #[test]
    fn converged_flag_matches_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let m = random_sym(6, &mut rng);
            for algo in [Algorithm::Pcp, Algorithm::Ialm] {
                let cfg = BaselineConfig::standard(6);
                let r = run(algo, &m, &cfg).unwrap();
                assert_eq!(r.converged, r.residual <= cfg.tol, "{algo:?}");
            }
        }
        let m = random_sym(6, &mut rng);
        let r = pcp(&m, &BaselineConfig { max_iters: 2, ..BaselineConfig::standard(6) }).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iters, 2);
    }

    #[test]
    fn ialm_matches_pcp() {
        let src = SyntheticSource::new(GenConfig {
            n: 8,
            k0: 2,
            s0: 0.9,
            distribution: FactorDistribution::Normal,
            seed: 4,
            count: 5,
        })
        .unwrap();
        for i in 0..5 {
            let m = src.sample(i).m.to_matrix();
            let cfg = BaselineConfig::standard(8);
            let a = pcp(&m, &cfg).unwrap();
            let b = ialm(&m, &cfg).unwrap();
            let gap = (&a.l - &b.l).frobenius_norm() / m.frobenius_norm();
            assert!(gap <= 5e-2, "{gap}");
            assert!(b.iters < a.iters);
        }
    }

    #[test]
    fn lagrangian_nonincreasing_per_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_sym(6, &mut rng);
        let cfg = BaselineConfig {
            trace: true,
            ..BaselineConfig::standard(6)
        };
        for algo in [Algorithm::Pcp, Algorithm::Ialm] {
            let r = run(algo, &m, &cfg).unwrap();
            assert!(!r.lagrangian_trace.is_empty());
            assert!(r.lagrangian_monotone(1e-10), "{algo:?}");
        }
    }

    #[test]
    fn fpcp_large_lambda_is_truncated_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_sym(7, &mut rng);
        let cfg = BaselineConfig::new(1e6).with_rank(2);
        let r = fpcp(&m, &cfg).unwrap();
        let want = svd(&m).unwrap().truncated(2);
        assert!((&r.l - &want).max_abs() < 1e-6);
        assert_eq!(r.s.max_abs(), 0.0);
        assert!(r.converged);
    }

    #[test]
    fn fpcp_exact_low_rank_and_rank_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10;
        let u = Matrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
        let l0 = u.matmul(&u.transpose()).unwrap();
        let r = fpcp(&l0, &BaselineConfig::standard(n).with_rank(3)).unwrap();
        assert!((&r.l - &l0).frobenius_norm() / l0.frobenius_norm() <= 1e-3);

        for _ in 0..5 {
            let m = random_sym(n, &mut rng);
            let r = fpcp(&m, &BaselineConfig::standard(n).with_rank(2)).unwrap();
            let eig = sym_eigenvalues(&r.l_sym().unwrap(), 1e-12).unwrap();
            assert!(eig.iter().filter(|&&v| v > 0.01).count() <= 2);
        }
    }

    #[test]
    fn fpcp_requires_rank() {
        let m = Matrix::identity(3);
        assert!(fpcp(&m, &BaselineConfig::standard(3)).is_err());
        assert!(fpcp(&m, &BaselineConfig::standard(3).with_rank(4)).is_err());
        assert!(pcp(&m, &BaselineConfig::new(-1.0)).is_err());
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_sym(5, &mut rng);
        let cfg = BaselineConfig::standard(5);
        let a = pcp(&m, &cfg).unwrap();
        let b = pcp(&m, &cfg).unwrap();
        assert_eq!(a.l, b.l);
        assert_eq!(a.iters, b.iters);
    }
}
