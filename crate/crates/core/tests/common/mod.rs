#![allow(dead_code)]

use denise::linalg::SymMatrix;
use denise::model::{backward, loss_from_output, forward, Architecture, NetworkParams, SmoothAbs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_symmetric(n: usize, scale: f64, rng: &mut impl Rng) -> SymMatrix {
    SymMatrix::from_lower_fn(n, |_, _| scale * rng.gen_range(-1.0..1.0))
}

/// Network with Glorot weights and small random biases.
pub fn random_params(arch: Architecture, seed: u64) -> NetworkParams {
    let mut params = NetworkParams::init(arch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for t in params.theta_mut() {
        if *t == 0.0 {
            *t = rng.gen_range(-0.1..0.1);
        }
    }
    params
}

pub fn loss_at(params: &NetworkParams, m: &SymMatrix, target: &SymMatrix, mu: SmoothAbs) -> f64 {
    let arch = params.arch();
    let x = forward(params, m).expect("forward").output;
    loss_from_output(&x, target, arch.n, arch.k, mu)
}

/// Largest coordinate-wise gap between the analytic parameter gradient and
/// central differences, relative to `max(|fd_i|, 1e-3 |fd|_inf)`.
pub fn max_gradient_rel_error(params: &NetworkParams, m: &SymMatrix, target: &SymMatrix, mu: SmoothAbs, h: f64) -> f64 {
    let analytic = backward(params, m, target, mu).expect("backward");
    let mut p = params.clone();
    let fd: Vec<f64> = (0..analytic.len())
        .map(|i| {
            let t0 = p.theta()[i];
            p.theta_mut()[i] = t0 + h;
            let up = loss_at(&p, m, target, mu);
            p.theta_mut()[i] = t0 - h;
            let down = loss_at(&p, m, target, mu);
            p.theta_mut()[i] = t0;
            (up - down) / (2.0 * h)
        })
        .collect();
    let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / f.abs().max(1e-3 * scale).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}
