//! Generates a labeled synthetic dataset, writes it to disk and reads it back.
//!
//! cargo run --release --example generate_dataset -- [COUNT] [OUT.ds]

use denise::datagen::{gen_dataset_to_file, Dataset, GenConfig, SampleSource};
use denise::metrics::{approx_rank, exact_sparsity, Stat};

fn main() -> denise::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let count: usize = args.first().map_or(1000, |s| s.parse().expect("sample count"));
    let out = args.get(1).cloned().unwrap_or_else(|| "synthetic_n20.ds".into());

    let cfg = GenConfig::standard(0, count);
    gen_dataset_to_file(&cfg, &out)?;
    let ds = Dataset::read(&out)?;
    println!("{} samples of dimension {} -> {out}", ds.len(), ds.dim());

    let mut ranks = Vec::new();
    let mut zeros = Vec::new();
    for i in 0..ds.len() {
        let s = ds.sample(i);
        ranks.push(approx_rank(&s.l0, 1e-8)? as f64);
        zeros.push(exact_sparsity(s.s0.as_matrix()));
    }
    println!("rank(L0)      {}", Stat::of(&ranks).display());
    println!("zeros in S0   {}", Stat::of(&zeros).display());
    Ok(())
}
