//! Decomposes one matrix with a saved model and prints L and S.
//!
//! cargo run --release --example decompose_matrix -- MODEL.json [MATRIX.csv]

use denise::datagen::{generate_sample, GenConfig};
use denise::linalg::SymMatrix;
use denise::metrics::{approx_rank, approx_sparsity};
use denise::model::DeniseModel;

fn main() -> denise::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = DeniseModel::load(args.first().expect("usage: decompose_matrix MODEL.json [MATRIX.csv]"))?;
    let m = match args.get(1) {
        Some(path) => SymMatrix::read_csv(path, true)?,
        None => generate_sample(&GenConfig::standard(11, 1), 0).m,
    };
    let d = model.decompose(&m)?;
    println!("L =\n{:?}", d.l);
    println!("S =\n{:?}", d.s);
    println!(
        "rank(L) {} sparsity(S) {:.2}",
        approx_rank(&d.l, 0.01)?,
        approx_sparsity(d.s.as_matrix(), 0.01)
    );
    Ok(())
}
