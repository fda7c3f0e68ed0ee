//! Seeded synthetic `(M, L0, S0)` triples: `L0 = U U^T` with random `U`,
//! `S0` a PSD sum of random 2x2 "blocks", `M = L0 + S0`.
//!
//! Each sample draws from its own ChaCha substreams keyed by `(seed, index)`,
//! so any sample can be regenerated in isolation and generation order (or
//! thread count) never changes the output.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distributions::Distribution as _;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DeniseError, Result};
use crate::linalg::{half_len, half_vectorize, HalfVector, SymMatrix};

pub const DATASET_MAGIC: &[u8; 8] = b"DENISEDS";
pub const DATASET_VERSION: u32 = 1;

/// Law of the entries of the low-rank factor `U`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorDistribution {
    Normal,
    /// Raw Student-t draws; not rescaled to unit variance.
    StudentT { dof: f64 },
}

impl FactorDistribution {
    pub fn student_t() -> Self {
        FactorDistribution::StudentT { dof: 5.0 }
    }
}

impl fmt::Display for FactorDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactorDistribution::Normal => write!(f, "normal"),
            FactorDistribution::StudentT { dof } => write!(f, "student-t:{dof}"),
        }
    }
}

impl FromStr for FactorDistribution {
    type Err = DeniseError;

    /// `normal`, `student-t` (5 degrees of freedom) or `student-t:<dof>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(FactorDistribution::Normal),
            "student-t" | "t" => Ok(FactorDistribution::student_t()),
            other => {
                let dof = other
                    .strip_prefix("student-t:")
                    .and_then(|d| d.parse::<f64>().ok())
                    .ok_or_else(|| DeniseError::Config(format!("unknown distribution `{other}`")))?;
                if !(dof > 0.0) {
                    return Err(DeniseError::Config("student-t dof must be positive".into()));
                }
                Ok(FactorDistribution::StudentT { dof })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub k0: usize,
    pub s0: f64,
    pub distribution: FactorDistribution,
    pub seed: u64,
    pub count: usize,
}

impl GenConfig {
    /// The n=20, rank 3, 95% sparsity recipe.
    pub fn standard(seed: u64, count: usize) -> Self {
        GenConfig {
            n: 20,
            k0: 3,
            s0: 0.95,
            distribution: FactorDistribution::Normal,
            seed,
            count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k0 == 0 || self.k0 > self.n {
            return Err(DeniseError::Config(format!(
                "need 1 <= k0 <= n, got k0 = {}, n = {}",
                self.k0, self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.s0) {
            return Err(DeniseError::Config(format!("sparsity {} outside [0, 1]", self.s0)));
        }
        if self.count == 0 {
            return Err(DeniseError::Config("count must be at least 1".into()));
        }
        if let FactorDistribution::StudentT { dof } = self.distribution {
            if !(dof > 0.0) {
                return Err(DeniseError::Config("student-t dof must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub m: SymMatrix,
    pub l0: SymMatrix,
    pub s0: SymMatrix,
    pub index: usize,
}

impl Sample {
    /// Wraps an unlabeled matrix; the low-rank and sparse parts are zero.
    pub fn unlabeled(m: SymMatrix, index: usize) -> Self {
        let n = m.n();
        Sample {
            m,
            l0: SymMatrix::zeros(n),
            s0: SymMatrix::zeros(n),
            index,
        }
    }
}

/// `U U^T` for an `n x k0` factor whose entries come from `draw`, row-major.
pub fn gen_low_rank_with(n: usize, k0: usize, mut draw: impl FnMut() -> f64) -> SymMatrix {
    let u: Vec<f64> = (0..n * k0).map(|_| draw()).collect();
    crate::linalg::gram_rows(&u, n, k0)
}

pub fn gen_low_rank<R: Rng + ?Sized>(
    n: usize,
    k0: usize,
    distribution: FactorDistribution,
    rng: &mut R,
) -> SymMatrix {
    match distribution {
        FactorDistribution::Normal => {
            gen_low_rank_with(n, k0, || rng.sample::<f64, _>(StandardNormal))
        }
        FactorDistribution::StudentT { dof } => {
            let t = StudentT::new(dof).expect("dof validated");
            gen_low_rank_with(n, k0, || t.sample(rng))
        }
    }
}

/// One elementary PSD block: `a` at `(i,i)` and `(j,j)`, `b` at `(i,j)` and
/// `(j,i)`, with `|b| <= a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseBlock {
    pub i: usize,
    pub j: usize,
    pub a: f64,
    pub b: f64,
}

impl SparseBlock {
    pub fn draw<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let first = rng.gen_range(0..n);
        let mut second = rng.gen_range(0..n - 1);
        if second >= first {
            second += 1;
        }
        let b = rng.gen_range(-1.0..=1.0);
        let a = rng.gen_range(f64::abs(b)..=1.0);
        SparseBlock {
            i: first.min(second),
            j: first.max(second),
            a,
            b,
        }
    }

    fn add_to(&self, n: usize, data: &mut [f64]) {
        data[self.i * n + self.i] += self.a;
        data[self.j * n + self.j] += self.a;
        data[self.i * n + self.j] += self.b;
        data[self.j * n + self.i] += self.b;
    }

    pub fn to_matrix(&self, n: usize) -> SymMatrix {
        let mut data = vec![0.0; n * n];
        self.add_to(n, &mut data);
        SymMatrix::from_dense(n, data).expect("block is symmetric")
    }
}

/// Sums random blocks while the exact-zero fraction stays at or above `s0`;
/// the block that would push it below `s0` is discarded and generation
/// stops. The result therefore has sparsity in `[s0, s0 + 4/n^2)`.
pub fn gen_sparse<R: Rng + ?Sized>(n: usize, s0: f64, rng: &mut R) -> SymMatrix {
    let mut data = vec![0.0; n * n];
    if n < 2 {
        return SymMatrix::zeros(n.max(1));
    }
    let total = (n * n) as f64;
    let mut zeros = n * n;
    let mut candidate = data.clone();
    while zeros > 0 {
        let block = SparseBlock::draw(n, rng);
        candidate.copy_from_slice(&data);
        block.add_to(n, &mut candidate);
        let cand_zeros = candidate.iter().filter(|&&v| v == 0.0).count();
        if (cand_zeros as f64) / total < s0 {
            break;
        }
        std::mem::swap(&mut data, &mut candidate);
        zeros = cand_zeros;
    }
    SymMatrix::from_dense(n, data).expect("sum of symmetric blocks")
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sample `index` of the dataset described by `cfg`. `L0` and `S0` draw from
/// separate substreams, so changing the factor law leaves `S0` untouched.
pub fn generate_sample(cfg: &GenConfig, index: usize) -> Sample {
    let mut low_rng = substream(cfg.seed, 2 * index as u64);
    let mut sparse_rng = substream(cfg.seed, 2 * index as u64 + 1);
    let l0 = gen_low_rank(cfg.n, cfg.k0, cfg.distribution, &mut low_rng);
    let s0 = gen_sparse(cfg.n, cfg.s0, &mut sparse_rng);
    Sample {
        m: &l0 + &s0,
        l0,
        s0,
        index,
    }
}

/// Random access to a collection of samples of one dimension.
pub trait SampleSource: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> Sample;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Lazily generated synthetic dataset; nothing is held in memory.
#[derive(Clone, Debug)]
pub struct SyntheticSource {
    cfg: GenConfig,
}

impl SyntheticSource {
    pub fn new(cfg: GenConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SyntheticSource { cfg })
    }

    pub fn config(&self) -> &GenConfig {
        &self.cfg
    }
}

impl SampleSource for SyntheticSource {
    fn dim(&self) -> usize {
        self.cfg.n
    }

    fn len(&self) -> usize {
        self.cfg.count
    }

    fn sample(&self, index: usize) -> Sample {
        generate_sample(&self.cfg, index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub n: usize,
    pub count: usize,
    /// False for real-world matrices, whose `L0`/`S0` records are zero.
    pub labeled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GenConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// In-memory dataset stored as packed half-vectors `(M, L0, S0)` per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    header: DatasetHeader,
    records: Vec<f64>,
}

impl Dataset {
    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    fn record_len(&self) -> usize {
        3 * half_len(self.header.n)
    }

    pub fn from_samples(
        n: usize,
        labeled: bool,
        generator: Option<GenConfig>,
        description: Option<String>,
        samples: impl IntoIterator<Item = Sample>,
    ) -> Result<Self> {
        let mut records = Vec::new();
        let mut count = 0;
        for s in samples {
            if s.m.n() != n || s.l0.n() != n || s.s0.n() != n {
                return Err(DeniseError::dim(n, s.m.n()));
            }
            for part in [&s.m, &s.l0, &s.s0] {
                records.extend_from_slice(half_vectorize(part).as_slice());
            }
            count += 1;
        }
        Ok(Dataset {
            header: DatasetHeader {
                version: DATASET_VERSION,
                n,
                count,
                labeled,
                generator,
                description,
            },
            records,
        })
    }

    /// Unlabeled dataset from plain matrices (e.g. correlation matrices).
    pub fn from_matrices(matrices: &[SymMatrix], description: impl Into<String>) -> Result<Self> {
        let n = matrices
            .first()
            .map(SymMatrix::n)
            .ok_or_else(|| DeniseError::Config("no matrices".into()))?;
        Dataset::from_samples(
            n,
            false,
            None,
            Some(description.into()),
            matrices
                .iter()
                .enumerate()
                .map(|(i, m)| Sample::unlabeled(m.clone(), i)),
        )
    }

    /// Subset by index, preserving order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let len = self.record_len();
        let mut records = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            records.extend_from_slice(&self.records[i * len..(i + 1) * len]);
        }
        let mut header = self.header.clone();
        header.count = indices.len();
        Dataset { header, records }
    }

    /// Concatenates datasets of equal dimension.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| DeniseError::Config("nothing to concatenate".into()))?;
        let mut header = first.header.clone();
        header.generator = None;
        header.count = 0;
        let mut records = Vec::new();
        for p in parts {
            if p.header.n != header.n {
                return Err(DeniseError::dim(header.n, p.header.n));
            }
            header.labeled &= p.header.labeled;
            header.count += p.header.count;
            records.extend_from_slice(&p.records);
        }
        Ok(Dataset { header, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let out = BufWriter::new(File::create(path)?);
        write_dataset(out, &self.header, (0..self.len()).map(|i| self.sample(i)))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from(mut input: impl Read) -> Result<Dataset> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(DeniseError::Parse("not a dataset file (bad magic)".into()));
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut json)?;
        let header: DatasetHeader = serde_json::from_slice(&json)?;
        if header.version != DATASET_VERSION {
            return Err(DeniseError::Parse(format!(
                "unsupported dataset version {}",
                header.version
            )));
        }
        let values = header.count * 3 * half_len(header.n);
        let mut bytes = vec![0u8; values * 8];
        input.read_exact(&mut bytes)?;
        let mut extra = [0u8; 1];
        if input.read(&mut extra)? != 0 {
            return Err(DeniseError::Parse("trailing bytes after last record".into()));
        }
        let records = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Dataset { header, records })
    }
}

impl SampleSource for Dataset {
    fn dim(&self) -> usize {
        self.header.n
    }

    fn len(&self) -> usize {
        self.header.count
    }

    fn sample(&self, index: usize) -> Sample {
        let n = self.header.n;
        let d = half_len(n);
        let rec = &self.records[index * 3 * d..(index + 1) * 3 * d];
        let part = |p: usize| {
            HalfVector::from_vec(n, rec[p * d..(p + 1) * d].to_vec())
                .expect("record length")
                .to_sym()
        };
        Sample {
            m: part(0),
            l0: part(1),
            s0: part(2),
            index,
        }
    }
}

/// Streams a header and samples in the dataset file layout: magic,
/// little-endian `u32` header length, JSON header, then per sample the
/// half-vectorized `M`, `L0`, `S0` as little-endian `f64`.
pub fn write_dataset(
    mut out: impl Write,
    header: &DatasetHeader,
    samples: impl Iterator<Item = Sample>,
) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut written = 0;
    for s in samples {
        for part in [&s.m, &s.l0, &s.s0] {
            if part.n() != header.n {
                return Err(DeniseError::dim(header.n, part.n()));
            }
            for v in half_vectorize(part).as_slice() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        written += 1;
    }
    if written != header.count {
        return Err(DeniseError::dim(
            format!("{} samples", header.count),
            written,
        ));
    }
    out.flush()?;
    Ok(())
}

/// Generates the whole dataset in memory (in parallel; output does not
/// depend on the thread count).
pub fn gen_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let samples: Vec<Sample> = (0..cfg.count)
        .into_par_iter()
        .map(|i| generate_sample(cfg, i))
        .collect();
    Dataset::from_samples(cfg.n, true, Some(cfg.clone()), None, samples)
}

/// Generates straight to disk in chunks, for datasets too large to hold.
pub fn gen_dataset_to_file(cfg: &GenConfig, path: impl AsRef<Path>) -> Result<()> {
    cfg.validate()?;
    let header = DatasetHeader {
        version: DATASET_VERSION,
        n: cfg.n,
        count: cfg.count,
        labeled: true,
        generator: Some(cfg.clone()),
        description: None,
    };
    const CHUNK: usize = 4096;
    let out = BufWriter::new(File::create(path)?);
    let chunks = (0..cfg.count).step_by(CHUNK).flat_map(|start| {
        let end = (start + CHUNK).min(cfg.count);
        (start..end)
            .into_par_iter()
            .map(|i| generate_sample(cfg, i))
            .collect::<Vec<_>>()
    });
    write_dataset(out, &header, chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sym_eigenvalues, EIGEN_TOL};

    #[test]
    fn block_example_layout() {
        let block = SparseBlock {
            i: 0,
            j: 1,
            a: 0.3,
            b: -0.2,
        };
        let m = block.to_matrix(3);
        let expected = vec![0.3, -0.2, 0.0, -0.2, 0.3, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(m.as_slice(), expected.as_slice());
    }

    #[test]
    fn drawn_blocks_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let b = SparseBlock::draw(5, &mut rng);
            assert!(b.i < b.j && b.j < 5);
            // eigenvalues of the active 2x2 are a +- b
            assert!(b.a - b.b.abs() >= 0.0);
        }
    }

    #[test]
    fn identity_factor_gives_identity() {
        let n = 4;
        let mut entries = (0..n * n).map(|t| if t / n == t % n { 1.0 } else { 0.0 });
        let l = gen_low_rank_with(n, n, || entries.next().unwrap());
        assert_eq!(l, SymMatrix::identity(n));
    }

    #[test]
    fn sparse_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gen_sparse(1, 0.5, &mut rng), SymMatrix::zeros(1));
        assert_eq!(gen_sparse(6, 1.0, &mut rng), SymMatrix::zeros(6));
        // s0 = 0 terminates once the matrix is dense
        let dense = gen_sparse(3, 0.0, &mut rng);
        assert_eq!(dense.zero_fraction(), 0.0);
    }

    #[test]
    fn sparse_lands_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for s0 in [0.6, 0.8, 0.95] {
            for _ in 0..200 {
                let s = gen_sparse(10, s0, &mut rng);
                let z = s.zero_fraction();
                assert!(z >= s0 && z < s0 + 4.0 / 100.0 + 1e-12, "s0 {s0} got {z}");
                let min = sym_eigenvalues(&s, EIGEN_TOL).unwrap().pop().unwrap();
                assert!(min >= -1e-10);
            }
        }
    }

    #[test]
    fn sample_identity_and_determinism() {
        let cfg = GenConfig::standard(11, 4);
        let a = generate_sample(&cfg, 3);
        let b = generate_sample(&cfg, 3);
        assert_eq!(a, b);
        assert!((&(&a.l0 + &a.s0) - &a.m).max_abs() <= 1e-12);
        assert_ne!(generate_sample(&cfg, 2).l0, a.l0);
    }

    #[test]
    fn student_t_only_changes_low_rank_part() {
        let normal = GenConfig::standard(5, 3);
        let t = GenConfig {
            distribution: FactorDistribution::student_t(),
            ..normal.clone()
        };
        for i in 0..3 {
            let a = generate_sample(&normal, i);
            let b = generate_sample(&t, i);
            assert_eq!(a.s0, b.s0);
            assert_ne!(a.l0, b.l0);
        }
    }

    #[test]
    fn config_validation() {
        let ok = GenConfig::standard(0, 1);
        assert!(ok.validate().is_ok());
        assert!(GenConfig { count: 0, ..ok.clone() }.validate().is_err());
        assert!(GenConfig { k0: 21, ..ok.clone() }.validate().is_err());
        assert!(GenConfig { s0: 1.5, ..ok.clone() }.validate().is_err());
        assert!(gen_dataset(&GenConfig { count: 0, ..ok }).is_err());
    }

    #[test]
    fn distribution_parsing() {
        assert_eq!("normal".parse::<FactorDistribution>().unwrap(), FactorDistribution::Normal);
        assert_eq!(
            "student-t".parse::<FactorDistribution>().unwrap(),
            FactorDistribution::StudentT { dof: 5.0 }
        );
        assert_eq!(
            "student-t:3".parse::<FactorDistribution>().unwrap(),
            FactorDistribution::StudentT { dof: 3.0 }
        );
        assert!("cauchy".parse::<FactorDistribution>().is_err());
        assert!("student-t:-1".parse::<FactorDistribution>().is_err());
    }

    #[test]
    fn file_roundtrip_and_byte_identity() {
        let cfg = GenConfig {
            count: 5,
            ..GenConfig::standard(9, 5)
        };
        let ds = gen_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        ds.write(&p1).unwrap();
        gen_dataset_to_file(&cfg, &p2).unwrap();
        let bytes1 = std::fs::read(&p1).unwrap();
        assert_eq!(bytes1, std::fs::read(&p2).unwrap());
        let back = Dataset::read(&p1).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.sample(4), generate_sample(&cfg, 4));

        let mut truncated = bytes1.clone();
        truncated.pop();
        assert!(Dataset::read_from(truncated.as_slice()).is_err());
        let mut bad = bytes1;
        bad[0] = b'X';
        assert!(Dataset::read_from(bad.as_slice()).is_err());
    }
}
