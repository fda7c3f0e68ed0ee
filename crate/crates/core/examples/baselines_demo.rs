//! Runs the three classical solvers on a rank-one matrix with a sparse spike.
//!
//! cargo run --release --example baselines_demo

use denise::baselines::{run, Algorithm, BaselineConfig};
use denise::linalg::Matrix;
use denise::metrics::{approx_rank, approx_sparsity, rel_error};

fn main() -> denise::Result<()> {
    let n = 10;
    let u: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let l0 = Matrix::from_fn(n, n, |i, j| u[i] * u[j]);
    let mut s0 = Matrix::zeros(n, n);
    s0[(2, 7)] = 3.0;
    s0[(7, 2)] = 3.0;
    let m = &l0 + &s0;

    let base = BaselineConfig::standard(n);
    println!("lambda = {:.4}", base.lambda);
    for (algo, cfg) in [
        (Algorithm::Pcp, base.clone()),
        (Algorithm::Ialm, base.clone()),
        (Algorithm::Fpcp, base.with_rank(1)),
    ] {
        let r = run(algo, &m, &cfg)?;
        println!(
            "{:5} iters {:5} converged {} rank {} s(S) {:.2} rel.error(L) {:.2e} {:.1} ms",
            algo.name(),
            r.iters,
            r.converged,
            approx_rank(&r.l_sym()?, 0.01)?,
            approx_sparsity(&r.s, 0.01),
            rel_error(&r.l, &l0)?,
            r.wall_ms
        );
    }
    Ok(())
}
