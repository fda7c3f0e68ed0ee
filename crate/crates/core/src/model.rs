//! The decomposition network: `M -> h(M) -> f(h(M)) = X -> U = g(X)`,
//! `L = U U^T`, `S = M - L`.
//!
//! `f` is a four-layer perceptron with sigmoid hidden units and an affine
//! output. Gradients are exact: the seed at `X` is the closed-form
//! derivative of the smoothed entrywise l1 loss through `rho`, followed by
//! ordinary reverse accumulation through the layers.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::SampleSource;
use crate::error::{DeniseError, Result};
use crate::linalg::{half_len, half_vectorize, Matrix, FactorMatrix, SymMatrix};

pub const MODEL_FORMAT: &str = "denise-model";
pub const MODEL_VERSION: u32 = 1;
pub const NUM_LAYERS: usize = 4;

/// Smooth surrogate for `|x|`: the pseudo-Huber function
/// `sqrt(x^2 + delta^2) - delta`.
///
/// `mu(0) = 0`, `|mu'| < 1`, `0 < mu'' <= 1/delta` and
/// `|x| - delta <= mu(x) <= |x|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothAbs {
    pub delta: f64,
}

impl Default for SmoothAbs {
    fn default() -> Self {
        SmoothAbs { delta: 1e-3 }
    }
}

impl SmoothAbs {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(DeniseError::Config(format!("smoothing delta must be > 0, got {delta}")));
        }
        Ok(SmoothAbs { delta })
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        // x^2 / (sqrt(x^2 + d^2) + d) avoids cancellation near 0
        let r = x.hypot(self.delta);
        x * x / (r + self.delta)
    }

    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        x / x.hypot(self.delta)
    }

    #[inline]
    pub fn d2(&self, x: f64) -> f64 {
        let r = x.hypot(self.delta);
        self.delta * self.delta / (r * r * r)
    }

    /// Upper bound on the second derivative.
    pub fn max_d2(&self) -> f64 {
        1.0 / self.delta
    }

    /// `sum_ij mu(R_ij)`.
    pub fn sum(&self, r: &[f64]) -> f64 {
        r.iter().map(|&x| self.value(x)).sum()
    }
}

/// Layer widths `[n(n+1)/2, h1, h2, h3, n k]`. Hidden layers use the
/// logistic sigmoid, the output layer is affine.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n: usize,
    pub k: usize,
    pub widths: Vec<usize>,
}

impl Architecture {
    pub fn new(n: usize, k: usize, hidden: [usize; 3]) -> Result<Self> {
        if n == 0 || k == 0 || k > n {
            return Err(DeniseError::Config(format!("need 1 <= k <= n, got n = {n}, k = {k}")));
        }
        if hidden.contains(&0) {
            return Err(DeniseError::Config("hidden widths must be positive".into()));
        }
        Ok(Architecture {
            n,
            k,
            widths: vec![half_len(n), hidden[0], hidden[1], hidden[2], n * k],
        })
    }

    /// Hidden widths tapering 4:2:1, scaled so the total number of
    /// trainable values (weights and biases) is as close as possible to
    /// `32 n(n+1)/2`.
    pub fn default_sizing(n: usize, k: usize) -> Result<Self> {
        let d = half_len(n);
        let target = 32 * d;
        let mut best: Option<(usize, [usize; 3])> = None;
        for h1 in 1..=8 * d.max(4) {
            for h2 in [h1 / 2, (h1 + 1) / 2] {
                for h3 in [h1 / 4, (h1 + 3) / 4] {
                    if h2 == 0 || h3 == 0 {
                        continue;
                    }
                    let hidden = [h1, h2, h3];
                    let count = Architecture::new(n, k, hidden)?.param_count();
                    let err = count.abs_diff(target);
                    if best.map_or(true, |(e, _)| err < e) {
                        best = Some((err, hidden));
                    }
                }
            }
        }
        Architecture::new(n, k, best.expect("search space is non-empty").1)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[NUM_LAYERS]
    }

    pub fn hidden(&self) -> [usize; 3] {
        [self.widths[1], self.widths[2], self.widths[3]]
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layer_shapes(&self) -> [(usize, usize); NUM_LAYERS] {
        std::array::from_fn(|l| (self.widths[l], self.widths[l + 1]))
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    fn layer_offsets(&self) -> [usize; NUM_LAYERS + 1] {
        let mut offsets = [0; NUM_LAYERS + 1];
        for (l, (i, o)) in self.layer_shapes().iter().enumerate() {
            offsets[l + 1] = offsets[l] + i * o + o;
        }
        offsets
    }

    fn validate(&self) -> Result<()> {
        let expected = Architecture::new(self.n, self.k, {
            if self.widths.len() != NUM_LAYERS + 1 {
                return Err(DeniseError::Parse(format!(
                    "architecture needs {} widths, got {}",
                    NUM_LAYERS + 1,
                    self.widths.len()
                )));
            }
            self.hidden()
        })?;
        if &expected != self {
            return Err(DeniseError::Parse(format!(
                "input/output widths {:?} inconsistent with n = {}, k = {}",
                self.widths, self.n, self.k
            )));
        }
        Ok(())
    }
}

/// Fixed per-feature standardization applied to `h(M)` before the first
/// layer. Not trained.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        InputNorm {
            mean: vec![0.0; dim],
            inv_std: vec![1.0; dim],
        }
    }

    /// Feature means and standard deviations over the first `max_samples`
    /// samples of `source`.
    pub fn fit(source: &dyn SampleSource, max_samples: usize) -> Self {
        let count = source.len().min(max_samples).max(1);
        let dim = half_len(source.dim());
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for i in 0..count.min(source.len()) {
            let h = half_vectorize(&source.sample(i).m);
            for ((s, q), &v) in sum.iter_mut().zip(&mut sum_sq).zip(h.as_slice()) {
                *s += v;
                *q += v * v;
            }
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let inv_std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / c - m * m).max(0.0);
                if var.sqrt() > 1e-12 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        InputNorm { mean, inv_std }
    }

    fn apply(&self, h: &[f64], out: &mut [f64]) {
        for (((o, &x), &m), &s) in out.iter_mut().zip(h).zip(&self.mean).zip(&self.inv_std) {
            *o = (x - m) * s;
        }
    }
}

/// Weights and biases of the four layers, packed into one flat vector
/// (per layer: row-major `fan_out x fan_in` weights, then biases).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    norm: InputNorm,
    theta: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: Architecture) -> Self {
        let norm = InputNorm::identity(arch.input_dim());
        let theta = vec![0.0; arch.param_count()];
        NetworkParams { arch, norm, theta }
    }

    /// Glorot-uniform weights `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = NetworkParams::zeros(arch);
        let offsets = params.arch.layer_offsets();
        for (l, (fan_in, fan_out)) in params.arch.layer_shapes().into_iter().enumerate() {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut params.theta[offsets[l]..offsets[l] + fan_in * fan_out] {
                *w = rng.gen_range(-a..a);
            }
        }
        params
    }

    pub fn from_parts(arch: Architecture, norm: InputNorm, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(DeniseError::dim(arch.param_count(), theta.len()));
        }
        if norm.mean.len() != arch.input_dim() || norm.inv_std.len() != arch.input_dim() {
            return Err(DeniseError::dim(arch.input_dim(), norm.mean.len()));
        }
        if !theta.iter().chain(&norm.mean).chain(&norm.inv_std).all(|v| v.is_finite()) {
            return Err(DeniseError::Parse("non-finite parameter".into()));
        }
        Ok(NetworkParams { arch, norm, theta })
    }

    pub fn with_input_norm(mut self, norm: InputNorm) -> Result<Self> {
        if norm.mean.len() != self.arch.input_dim() || norm.inv_std.len() != self.arch.input_dim() {
            return Err(DeniseError::dim(self.arch.input_dim(), norm.mean.len()));
        }
        self.norm = norm;
        Ok(self)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_norm(&self) -> &InputNorm {
        &self.norm
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// `(weights, biases)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let offsets = self.arch.layer_offsets();
        let (fan_in, fan_out) = self.arch.layer_shapes()[l];
        let block = &self.theta[offsets[l]..offsets[l + 1]];
        block.split_at(fan_in * fan_out)
    }

    fn check_dim(&self, m: &SymMatrix) -> Result<()> {
        if m.n() != self.arch.n {
            return Err(DeniseError::dim(
                format!("{0}x{0} matrix", self.arch.n),
                format!("{0}x{0}", m.n()),
            ));
        }
        Ok(())
    }
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Standardized `h(M)`.
    pub input: Vec<f64>,
    /// Sigmoid outputs of the three hidden layers.
    pub hidden: [Vec<f64>; 3],
    /// `X = f(h(M))`, length `n k`.
    pub output: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[b][j] = act(b_j + W[j] . inp[b])` for a batch stored row-major.
fn affine_batch(
    w: &[f64],
    bias: &[f64],
    inp: &[f64],
    fan_in: usize,
    batch: usize,
    sigmoid_out: bool,
    out: &mut [f64],
) {
    let fan_out = bias.len();
    for (j, wj) in w.chunks_exact(fan_in).enumerate() {
        for b in 0..batch {
            let z = bias[j] + dot(wj, &inp[b * fan_in..(b + 1) * fan_in]);
            out[b * fan_out + j] = if sigmoid_out { sigmoid(z) } else { z };
        }
    }
}

pub fn forward(params: &NetworkParams, m: &SymMatrix) -> Result<ForwardPass> {
    params.check_dim(m)?;
    let h = half_vectorize(m);
    let mut acts = forward_batch(params, h.as_slice(), 1);
    let output = acts.pop().expect("output layer");
    let input = acts.remove(0);
    let hidden: [Vec<f64>; 3] = acts.try_into().expect("three hidden layers");
    Ok(ForwardPass {
        input,
        hidden,
        output,
    })
}

/// All layer activations for a batch of raw half-vectors (row-major,
/// `batch x d_in`); element 0 is the standardized input.
fn forward_batch(params: &NetworkParams, raw: &[f64], batch: usize) -> Vec<Vec<f64>> {
    let arch = &params.arch;
    let d_in = arch.input_dim();
    let mut input = vec![0.0; batch * d_in];
    for b in 0..batch {
        params
            .norm
            .apply(&raw[b * d_in..(b + 1) * d_in], &mut input[b * d_in..(b + 1) * d_in]);
    }
    let mut acts = Vec::with_capacity(NUM_LAYERS + 1);
    acts.push(input);
    for (l, (fan_in, fan_out)) in arch.layer_shapes().into_iter().enumerate() {
        let (w, bias) = params.layer(l);
        let mut out = vec![0.0; batch * fan_out];
        affine_batch(w, bias, &acts[l], fan_in, batch, l + 1 < NUM_LAYERS, &mut out);
        acts.push(out);
    }
    acts
}

/// `M = L + S` with `L = U U^T`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub l: SymMatrix,
    pub s: SymMatrix,
    pub u: FactorMatrix,
}

pub fn decompose(params: &NetworkParams, m: &SymMatrix) -> Result<Decomposition> {
    let pass = forward(params, m)?;
    let u = crate::linalg::vector_to_factor(&pass.output, params.arch.n, params.arch.k)?;
    let l = u.gram();
    Ok(Decomposition { s: m - &l, l, u })
}

/// Smoothed `|| target - rho(X) ||_1` given the network output `X`.
pub fn loss_from_output(x: &[f64], target: &SymMatrix, n: usize, k: usize, mu: SmoothAbs) -> f64 {
    let l = crate::linalg::gram_rows(x, n, k);
    target
        .as_slice()
        .iter()
        .zip(l.as_slice())
        .map(|(t, v)| mu.value(t - v))
        .sum()
}

/// Smoothed `|| M - rho(f(h(M))) ||_1`.
pub fn loss_unsupervised(params: &NetworkParams, m: &SymMatrix, mu: SmoothAbs) -> Result<f64> {
    let x = forward(params, m)?.output;
    Ok(loss_from_output(&x, m, params.arch.n, params.arch.k, mu))
}

/// Smoothed `|| L0 - rho(f(h(M))) ||_1`.
pub fn loss_supervised(
    params: &NetworkParams,
    m: &SymMatrix,
    l0: &SymMatrix,
    mu: SmoothAbs,
) -> Result<f64> {
    params.check_dim(l0)?;
    let x = forward(params, m)?.output;
    Ok(loss_from_output(&x, l0, params.arch.n, params.arch.k, mu))
}

/// Gradient of `X -> sum_ij mu([g(X) g(X)^T - T]_ij)`:
/// `d/dX_(a,b) = 2 sum_j mu'(w_aj) X_(j,b)` with `w = g(X) g(X)^T - T`.
pub fn grad_wrt_x(x: &[f64], target: &SymMatrix, n: usize, k: usize, mu: SmoothAbs) -> Vec<f64> {
    let mut grad = vec![0.0; n * k];
    let mut scratch = vec![0.0; n * n];
    seed_gradient(x, target.as_slice(), n, k, mu, &mut scratch, &mut grad);
    grad
}

/// Writes the gradient at `X` into `grad` and returns the loss.
fn seed_gradient(
    x: &[f64],
    target: &[f64],
    n: usize,
    k: usize,
    mu: SmoothAbs,
    dmu: &mut [f64],
    grad: &mut [f64],
) -> f64 {
    let mut loss = 0.0;
    for a in 0..n {
        let xa = &x[a * k..(a + 1) * k];
        for j in 0..=a {
            let xj = &x[j * k..(j + 1) * k];
            let w = xa.iter().zip(xj).map(|(p, q)| p * q).sum::<f64>() - target[a * n + j];
            let v = mu.value(w);
            loss += if j == a { v } else { 2.0 * v };
            let d = mu.d1(w);
            dmu[a * n + j] = d;
            dmu[j * n + a] = d;
        }
    }
    grad.fill(0.0);
    for a in 0..n {
        let ga = &mut grad[a * k..(a + 1) * k];
        for j in 0..n {
            let coef = 2.0 * dmu[a * n + j];
            if coef != 0.0 {
                axpy(coef, &x[j * k..(j + 1) * k], ga);
            }
        }
    }
    loss
}

/// Hessian of the same map, `nk x nk`, indexed like `X`.
///
/// `d2/dX_(a,b) dX_(c,e) = 2 mu'(w_ac) [b = e]
///   + 2 mu''(w_ac) X_(c,b) X_(a,e)
///   + 2 [a = c] sum_j mu''(w_aj) X_(j,b) X_(j,e)`.
pub fn hessian_wrt_x(x: &[f64], target: &SymMatrix, n: usize, k: usize, mu: SmoothAbs) -> Matrix {
    let at = |i: usize, b: usize| x[i * k + b];
    let w = Matrix::from_fn(n, n, |i, j| {
        (0..k).map(|b| at(i, b) * at(j, b)).sum::<f64>() - target.get(i, j)
    });
    Matrix::from_fn(n * k, n * k, |nu, eta| {
        let (a, b) = (nu / k, nu % k);
        let (c, e) = (eta / k, eta % k);
        let mut h = 2.0 * mu.d2(w[(a, c)]) * at(c, b) * at(a, e);
        if b == e {
            h += 2.0 * mu.d1(w[(a, c)]);
        }
        if a == c {
            h += 2.0 * (0..n).map(|j| mu.d2(w[(a, j)]) * at(j, b) * at(j, e)).sum::<f64>();
        }
        h
    })
}

/// Reusable buffers and the batched loss/gradient kernel used by training.
pub struct GradientWorkspace {
    raw: Vec<f64>,
    targets: Vec<f64>,
    dmu: Vec<f64>,
}

impl Default for GradientWorkspace {
    fn default() -> Self {
        Self::new()
    }
}

impl GradientWorkspace {
    pub fn new() -> Self {
        GradientWorkspace {
            raw: Vec::new(),
            targets: Vec::new(),
            dmu: Vec::new(),
        }
    }

    /// Sum over the batch of per-sample losses and parameter gradients.
    /// `grad` is overwritten; per-sample losses are returned in input order.
    pub fn loss_and_grad(
        &mut self,
        params: &NetworkParams,
        inputs: &[(&SymMatrix, &SymMatrix)],
        mu: SmoothAbs,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        let arch = &params.arch;
        let (n, k) = (arch.n, arch.k);
        let batch = inputs.len();
        let d_in = arch.input_dim();
        if grad.len() != arch.param_count() {
            return Err(DeniseError::dim(arch.param_count(), grad.len()));
        }
        self.raw.clear();
        self.targets.clear();
        for (m, t) in inputs {
            params.check_dim(m)?;
            params.check_dim(t)?;
            self.raw.extend_from_slice(half_vectorize(m).as_slice());
            self.targets.extend_from_slice(t.as_slice());
        }
        debug_assert_eq!(self.raw.len(), batch * d_in);
        let acts = forward_batch(params, &self.raw, batch);

        // seed at X
        let d_out = arch.output_dim();
        let mut delta = vec![0.0; batch * d_out];
        self.dmu.resize(n * n, 0.0);
        let mut losses = Vec::with_capacity(batch);
        for b in 0..batch {
            let loss = seed_gradient(
                &acts[NUM_LAYERS][b * d_out..(b + 1) * d_out],
                &self.targets[b * n * n..(b + 1) * n * n],
                n,
                k,
                mu,
                &mut self.dmu,
                &mut delta[b * d_out..(b + 1) * d_out],
            );
            losses.push(loss);
        }

        grad.fill(0.0);
        let offsets = arch.layer_offsets();
        for l in (0..NUM_LAYERS).rev() {
            let (fan_in, fan_out) = arch.layer_shapes()[l];
            let inp = &acts[l];
            {
                let (gw, gb) = grad[offsets[l]..offsets[l + 1]].split_at_mut(fan_in * fan_out);
                for (j, gwj) in gw.chunks_exact_mut(fan_in).enumerate() {
                    for b in 0..batch {
                        let dj = delta[b * fan_out + j];
                        if dj != 0.0 {
                            axpy(dj, &inp[b * fan_in..(b + 1) * fan_in], gwj);
                        }
                        gb[j] += dj;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = params.layer(l);
            let mut prev = vec![0.0; batch * fan_in];
            for b in 0..batch {
                let pb = &mut prev[b * fan_in..(b + 1) * fan_in];
                for (j, wj) in w.chunks_exact(fan_in).enumerate() {
                    let dj = delta[b * fan_out + j];
                    if dj != 0.0 {
                        axpy(dj, wj, pb);
                    }
                }
                // sigmoid'(z) = a (1 - a)
                for (p, &a) in pb.iter_mut().zip(&inp[b * fan_in..(b + 1) * fan_in]) {
                    *p *= a * (1.0 - a);
                }
            }
            delta = prev;
        }
        Ok(losses)
    }
}

/// Gradient of the smoothed loss against `target` (`M` for the
/// unsupervised loss, `L0` for the supervised one) with respect to every
/// network parameter, in the packed layout of [`NetworkParams::theta`].
pub fn backward(
    params: &NetworkParams,
    m: &SymMatrix,
    target: &SymMatrix,
    mu: SmoothAbs,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.arch.param_count()];
    GradientWorkspace::new().loss_and_grad(params, &[(m, target)], mu, &mut grad)?;
    Ok(grad)
}

/// A network together with its smoothing scale and free-form provenance,
/// as stored in a model file.
#[derive(Clone, Debug)]
pub struct DeniseModel {
    pub params: NetworkParams,
    pub smooth: SmoothAbs,
    pub provenance: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    architecture: Architecture,
    hidden_activation: String,
    output_activation: String,
    delta: f64,
    input_mean: String,
    input_inv_std: String,
    layers: Vec<LayerBlob>,
    #[serde(default)]
    provenance: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct LayerBlob {
    fan_in: usize,
    fan_out: usize,
    weights: String,
    biases: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode(text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| DeniseError::Parse(format!("bad base64 weight blob: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(DeniseError::dim(expected * 8, format!("{} bytes", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl DeniseModel {
    pub fn new(params: NetworkParams, smooth: SmoothAbs) -> Self {
        DeniseModel {
            params,
            smooth,
            provenance: serde_json::Value::Null,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let arch = self.params.arch.clone();
        let layers = (0..NUM_LAYERS)
            .map(|l| {
                let (w, b) = self.params.layer(l);
                let (fan_in, fan_out) = arch.layer_shapes()[l];
                LayerBlob {
                    fan_in,
                    fan_out,
                    weights: encode(w),
                    biases: encode(b),
                }
            })
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            architecture: arch,
            hidden_activation: "sigmoid".into(),
            output_activation: "identity".into(),
            delta: self.smooth.delta,
            input_mean: encode(&self.params.norm.mean),
            input_inv_std: encode(&self.params.norm.inv_std),
            layers,
            provenance: self.provenance.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(DeniseError::Parse(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        if file.hidden_activation != "sigmoid" || file.output_activation != "identity" {
            return Err(DeniseError::Parse("unsupported activation".into()));
        }
        let arch = file.architecture;
        arch.validate()?;
        if file.layers.len() != NUM_LAYERS {
            return Err(DeniseError::Parse(format!("expected {NUM_LAYERS} layers")));
        }
        let mut theta = Vec::with_capacity(arch.param_count());
        for (blob, (fan_in, fan_out)) in file.layers.iter().zip(arch.layer_shapes()) {
            if blob.fan_in != fan_in || blob.fan_out != fan_out {
                return Err(DeniseError::dim(
                    format!("{fan_out}x{fan_in} layer"),
                    format!("{}x{}", blob.fan_out, blob.fan_in),
                ));
            }
            theta.extend(decode(&blob.weights, fan_in * fan_out)?);
            theta.extend(decode(&blob.biases, fan_out)?);
        }
        let d = arch.input_dim();
        let norm = InputNorm {
            mean: decode(&file.input_mean, d)?,
            inv_std: decode(&file.input_inv_std, d)?,
        };
        Ok(DeniseModel {
            params: NetworkParams::from_parts(arch, norm, theta)?,
            smooth: SmoothAbs::new(file.delta)?,
            provenance: file.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        DeniseModel::from_json(&fs::read_to_string(path)?)
    }

    pub fn decompose(&self, m: &SymMatrix) -> Result<Decomposition> {
        decompose(&self.params, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sym_eigenvalues, EIGEN_TOL};

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        SymMatrix::from_lower_fn(n, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn smooth_abs_bounds() {
        let mu = SmoothAbs::new(1e-2).unwrap();
        assert_eq!(mu.value(0.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100_000 {
            let x: f64 = rng.gen_range(-50.0..50.0) * rng.gen::<f64>().powi(4);
            let v = mu.value(x);
            assert!(v <= x.abs() && v >= x.abs() - mu.delta);
            assert!(mu.d1(x).abs() <= 1.0);
            assert!(mu.d1(x) * x.signum() >= 0.0);
            assert!(mu.d2(x) > 0.0 && mu.d2(x) <= mu.max_d2() * (1.0 + 1e-12));
        }
        assert!(SmoothAbs::new(0.0).is_err());
    }

    #[test]
    fn default_sizing_near_budget() {
        for n in 3..=40 {
            for k in [1, 2, 3] {
                let arch = Architecture::default_sizing(n, k).unwrap();
                let target = 32.0 * half_len(n) as f64;
                let rel = (arch.param_count() as f64 - target).abs() / target;
                assert!(rel <= 0.05, "n={n} k={k} {:?} -> {}", arch.widths, arch.param_count());
                let [h1, h2, h3] = arch.hidden();
                assert!(h1 >= h2 && h2 >= h3);
            }
        }
        assert_eq!(Architecture::default_sizing(20, 3).unwrap().widths[0], 210);
    }

    #[test]
    fn zero_network_gives_zero_low_rank() {
        let arch = Architecture::new(4, 2, [5, 4, 3]).unwrap();
        let params = NetworkParams::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_sym(4, &mut rng);
        let pass = forward(&params, &m).unwrap();
        assert!(pass.output.iter().all(|&x| x == 0.0));
        let d = decompose(&params, &m).unwrap();
        assert_eq!(d.l, SymMatrix::zeros(4));
        assert_eq!(d.s, m);
        let mu = SmoothAbs::default();
        let loss = loss_unsupervised(&params, &m, mu).unwrap();
        assert!(loss <= m.l1_norm() && loss >= m.l1_norm() - 16.0 * mu.delta);
    }

    #[test]
    fn hidden_activations_in_unit_interval() {
        let arch = Architecture::new(5, 2, [8, 6, 4]).unwrap();
        let params = NetworkParams::init(arch, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pass = forward(&params, &random_sym(5, &mut rng)).unwrap();
        for h in &pass.hidden {
            assert!(h.iter().all(|&a| a > 0.0 && a < 1.0));
        }
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        // n=2, k=1, every weight 0.1, biases 0, hidden width 2
        let arch = Architecture::new(2, 1, [2, 2, 2]).unwrap();
        let theta: Vec<f64> = {
            let mut t = Vec::new();
            for (fi, fo) in arch.layer_shapes() {
                t.extend(std::iter::repeat(0.1).take(fi * fo));
                t.extend(std::iter::repeat(0.0).take(fo));
            }
            t
        };
        let params =
            NetworkParams::from_parts(arch, InputNorm::identity(3), theta).unwrap();
        let m = SymMatrix::from_dense(2, vec![1.0, 0.5, 0.5, 2.0]).unwrap();
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let h1 = s(0.1 * (1.0 + 0.5 + 2.0));
        let h2 = s(0.1 * (h1 + h1));
        let h3 = s(0.1 * (h2 + h2));
        let x = 0.1 * (h3 + h3);
        let pass = forward(&params, &m).unwrap();
        assert!((pass.output[0] - x).abs() < 1e-15);
        assert!((pass.output[1] - x).abs() < 1e-15);
    }

    #[test]
    fn decompose_is_exact_and_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            let n = 3 + trial % 5;
            let k = 1 + trial % 3;
            let arch = Architecture::new(n, k, [6, 5, 4]).unwrap();
            let params = NetworkParams::init(arch, trial as u64);
            let m = random_sym(n, &mut rng);
            let d = decompose(&params, &m).unwrap();
            assert!((&(&d.l + &d.s) - &m).max_abs() <= 1e-12);
            let ev = sym_eigenvalues(&d.l, EIGEN_TOL).unwrap();
            assert!(*ev.last().unwrap() >= -1e-10);
            assert!(ev.iter().filter(|v| v.abs() > 1e-10).count() <= k);
        }
    }

    #[test]
    fn supervised_loss_zero_at_own_output() {
        let arch = Architecture::new(4, 2, [6, 5, 4]).unwrap();
        let params = NetworkParams::init(arch, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_sym(4, &mut rng);
        let l = decompose(&params, &m).unwrap().l;
        let mu = SmoothAbs::default();
        assert!(loss_supervised(&params, &m, &l, mu).unwrap() < 1e-20);
        let g = backward(&params, &m, &l, mu).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "max {}", g.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }

    #[test]
    fn seed_gradient_special_cases() {
        let mu = SmoothAbs::new(1e-2).unwrap();
        let m = SymMatrix::diag(&[0.7]);
        let x = 1.3;
        let g = grad_wrt_x(&[x], &m, 1, 1, mu);
        assert!((g[0] - 2.0 * mu.d1(x * x - 0.7) * x).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_sym(4, &mut rng);
        assert!(grad_wrt_x(&[0.0; 8], &t, 4, 2, mu).iter().all(|&v| v == 0.0));
    }

    fn fd_grad_x(x: &[f64], t: &SymMatrix, n: usize, k: usize, mu: SmoothAbs) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (loss_from_output(&xp, t, n, k, mu) - loss_from_output(&xm, t, n, k, mu)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn seed_gradient_matches_finite_differences() {
        let mu = SmoothAbs::new(1e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (n, k) = (5, 2);
            let x: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = random_sym(n, &mut rng);
            let g = grad_wrt_x(&x, &t, n, k, mu);
            let fd = fd_grad_x(&x, &t, n, k, mu);
            for (a, b) in g.iter().zip(&fd) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
                assert!(rel <= 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let mu = SmoothAbs::new(1e-1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let (n, k) = (4, 2);
            let x: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = random_sym(n, &mut rng);
            let hess = hessian_wrt_x(&x, &t, n, k, mu);
            let h = 1e-6;
            for eta in 0..n * k {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[eta] += h;
                xm[eta] -= h;
                let gp = grad_wrt_x(&xp, &t, n, k, mu);
                let gm = grad_wrt_x(&xm, &t, n, k, mu);
                for nu in 0..n * k {
                    let fd = (gp[nu] - gm[nu]) / (2.0 * h);
                    let an = hess[(nu, eta)];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    assert!(rel <= 1e-4, "({nu},{eta}): {an} vs {fd}");
                }
            }
            let asym = (&hess - &hess.transpose()).max_abs();
            assert!(asym <= 1e-12);
        }
    }

    #[test]
    fn model_file_roundtrip_and_validation() {
        let arch = Architecture::new(3, 2, [5, 4, 3]).unwrap();
        let mut model = DeniseModel::new(NetworkParams::init(arch, 9), SmoothAbs::new(5e-3).unwrap());
        model.provenance = serde_json::json!({"note": "test"});
        let text = model.to_json().unwrap();
        let back = DeniseModel::from_json(&text).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.smooth, model.smooth);
        assert_eq!(back.provenance["note"], "test");

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["architecture"]["widths"][0] = 7.into();
        assert!(DeniseModel::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["layers"][1]["weights"] = "AAAA".into();
        assert!(DeniseModel::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let params = NetworkParams::zeros(Architecture::new(3, 1, [2, 2, 2]).unwrap());
        assert!(forward(&params, &SymMatrix::identity(4)).is_err());
    }
}
