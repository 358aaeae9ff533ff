//! Mean-field variational Bayesian MLP trained by Bayes-by-backprop.
//!
//! The network maps an input to one Q-value per action (one output head per
//! action). Weights are `w = mu + softplus(rho) ⊙ ε` with `ε ~ N(0, I)`; the
//! ELBO is
//!
//! ```text
//! ELBO = (1/M) Σ_m (n / |B|) Σ_{i∈B} log N(r_i | f_{a_i}(s_i, w_m), σ²)  −  KL[q ‖ N(0, τ² I)]
//! ```
//!
//! and its gradient with respect to `(mu, rho)` is accumulated by hand-written
//! reverse-mode passes through each layer plus the reparameterization chain
//! rule. Training is plain SGD on shuffled mini-batches.
//!
//! Parameter layout: for each layer, the `fan_out × fan_in` weight matrix in
//! row-major order followed by the `fan_out` biases.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{domain_err, shape_err, PblError, Result};
use crate::numerics::{standard_normal, Matrix, RandomSeed};
use crate::posterior::{Covariance, GaussianPosterior};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: usize,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(domain_err(format!(
                "invalid architecture {input_dim} -> {hidden:?} -> {output_dim}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
        })
    }

    /// Two hidden layers of 16 units.
    pub fn default_for(input_dim: usize, action_count: usize) -> Result<Self> {
        Self::new(input_dim, vec![16, 16], action_count)
    }

    fn layers(&self) -> Vec<Layer> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        let mut off = 0;
        dims.windows(2)
            .map(|w| {
                let l = Layer {
                    fan_in: w[0],
                    fan_out: w[1],
                    w_off: off,
                    b_off: off + w[0] * w[1],
                };
                off += (w[0] + 1) * w[1];
                l
            })
            .collect()
    }

    /// `Σ (fan_in + 1) · fan_out`.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| (l.fan_in + 1) * l.fan_out).sum()
    }
}

/// Per-layer pre- and post-activations of one forward pass.
struct Trace {
    layers: Vec<Layer>,
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Trace {
    fn new(arch: &MlpArchitecture) -> Self {
        let layers = arch.layers();
        let mut acts = vec![vec![0.0; arch.input_dim]];
        let mut pre = Vec::new();
        let mut deltas = Vec::new();
        for l in &layers {
            acts.push(vec![0.0; l.fan_out]);
            pre.push(vec![0.0; l.fan_out]);
            deltas.push(vec![0.0; l.fan_out]);
        }
        Self {
            layers,
            acts,
            pre,
            deltas,
        }
    }

    fn forward(&mut self, w: &[f64], input: &[f64]) -> &[f64] {
        self.acts[0].copy_from_slice(input);
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let (head, tail) = self.acts.split_at_mut(li + 1);
            let h_in = &head[li];
            let h_out = &mut tail[0];
            let z = &mut self.pre[li];
            for o in 0..l.fan_out {
                let row = &w[l.w_off + o * l.fan_in..l.w_off + (o + 1) * l.fan_in];
                let mut s = w[l.b_off + o];
                for (a, b) in row.iter().zip(h_in.iter()) {
                    s += a * b;
                }
                z[o] = s;
                h_out[o] = if li == last { s } else { s.max(0.0) };
            }
        }
        &self.acts[last + 1]
    }

    /// Accumulates `∂/∂w` of `out_grad · f(w)` into `grad`, using the
    /// activations of the most recent forward pass.
    fn backward(&mut self, w: &[f64], out_grad: &[f64], grad: &mut [f64]) {
        let last = self.layers.len() - 1;
        self.deltas[last].copy_from_slice(out_grad);
        for li in (0..=last).rev() {
            let l = self.layers[li];
            let h_in = &self.acts[li];
            {
                let delta = &self.deltas[li];
                for o in 0..l.fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    grad[l.b_off + o] += d;
                    let g = &mut grad[l.w_off + o * l.fan_in..l.w_off + (o + 1) * l.fan_in];
                    for (gi, hi) in g.iter_mut().zip(h_in.iter()) {
                        *gi += d * hi;
                    }
                }
            }
            if li > 0 {
                let (lower, upper) = self.deltas.split_at_mut(li);
                let delta = &upper[0];
                let prev = &mut lower[li - 1];
                let z_prev = &self.pre[li - 1];
                for i in 0..l.fan_in {
                    if z_prev[i] <= 0.0 {
                        prev[i] = 0.0;
                        continue;
                    }
                    let mut s = 0.0;
                    for o in 0..l.fan_out {
                        s += w[l.w_off + o * l.fan_in + i] * delta[o];
                    }
                    prev[i] = s;
                }
            }
        }
    }
}

fn check_dims(w: &[f64], arch: &MlpArchitecture, s: &[f64]) -> Result<()> {
    if w.len() != arch.param_count() {
        return Err(shape_err(format!(
            "weight vector has length {}, architecture needs {}",
            w.len(),
            arch.param_count()
        )));
    }
    if s.len() != arch.input_dim {
        return Err(shape_err(format!(
            "input has length {}, architecture expects {}",
            s.len(),
            arch.input_dim
        )));
    }
    Ok(())
}

/// Evaluates the network: ReLU hidden layers, identity output.
pub fn forward(w: &[f64], arch: &MlpArchitecture, s: &[f64]) -> Result<Vec<f64>> {
    check_dims(w, arch, s)?;
    let mut t = Trace::new(arch);
    Ok(t.forward(w, s).to_vec())
}

/// Evaluates one weight vector on many inputs, reusing buffers.
pub fn forward_batch(w: &[f64], arch: &MlpArchitecture, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut t = Trace::new(arch);
    inputs
        .iter()
        .map(|s| {
            check_dims(w, arch, s)?;
            Ok(t.forward(w, s).to_vec())
        })
        .collect()
}

/// Calls `sink(i, outputs)` for every input, without allocating per input.
pub(crate) fn forward_each(
    w: &[f64],
    arch: &MlpArchitecture,
    inputs: &[Vec<f64>],
    mut sink: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let mut t = Trace::new(arch);
    for (i, s) in inputs.iter().enumerate() {
        check_dims(w, arch, s)?;
        sink(i, t.forward(w, s));
    }
    Ok(())
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl VariationalParams {
    pub fn std(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    pub fn posterior(&self) -> Result<GaussianPosterior> {
        GaussianPosterior::new(
            self.mu.clone(),
            Covariance::Diagonal(self.std().iter().map(|s| s * s).collect()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BnnTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
    /// Likelihood variance σ².
    pub noise_variance: f64,
    pub prior_std: f64,
    pub seed: u64,
}

impl Default for BnnTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 500,
            batch_size: 100,
            mc_samples: 5,
            noise_variance: 0.25,
            prior_std: 1.0,
            seed: 0,
        }
    }
}

impl BnnTrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || self.epochs == 0
            || self.batch_size == 0
            || self.mc_samples == 0
            || !(self.noise_variance > 0.0)
            || !(self.prior_std > 0.0)
        {
            return Err(domain_err(format!("invalid BNN training config {self:?}")));
        }
        Ok(())
    }
}

pub const INIT_MU_STD: f64 = 0.1;
pub const INIT_RHO: f64 = -3.0;

/// `mu ~ N(0, 0.1²)`, `rho = −3`.
pub fn bnn_init(arch: &MlpArchitecture, seed: RandomSeed) -> VariationalParams {
    let p = arch.param_count();
    let mut rng = seed.rng();
    VariationalParams {
        mu: (0..p).map(|_| INIT_MU_STD * standard_normal(&mut rng)).collect(),
        rho: vec![INIT_RHO; p],
    }
}

/// `KL[N(mu, softplus(rho)²) ‖ N(0, prior_std²)]`, summed over coordinates.
pub fn kl_to_prior(params: &VariationalParams, prior_std: f64) -> f64 {
    let pv = prior_std * prior_std;
    params
        .mu
        .iter()
        .zip(&params.rho)
        .map(|(&m, &r)| {
            let s = softplus(r);
            (prior_std / s).ln() + (s * s + m * m) / (2.0 * pv) - 0.5
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboGrad {
    pub elbo: f64,
    pub grad_mu: Vec<f64>,
    pub grad_rho: Vec<f64>,
}

/// Scaled Gaussian log-likelihood of a mini-batch and its weight gradient.
fn loglik_and_grad(
    w: &[f64],
    trace: &mut Trace,
    data: &Dataset,
    batch: &[usize],
    noise_variance: f64,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * noise_variance).ln();
    let mut out_grad = vec![0.0; data.action_count];
    let mut ll = 0.0;
    for &i in batch {
        let a = data.actions[i];
        let f = trace.forward(w, &data.states[i])[a];
        let resid = data.rewards[i] - f;
        ll += log_norm - resid * resid / (2.0 * noise_variance);
        out_grad.iter_mut().for_each(|g| *g = 0.0);
        out_grad[a] = scale * resid / noise_variance;
        trace.backward(w, &out_grad, grad);
    }
    scale * ll
}

/// Reparameterized ELBO estimate on `batch` (indices into `data`) and its
/// exact gradient for the supplied `noise_draws` (`mc_samples × p`).
pub fn elbo_and_grad(
    params: &VariationalParams,
    arch: &MlpArchitecture,
    data: &Dataset,
    batch: &[usize],
    config: &BnnTrainConfig,
    noise_draws: &Matrix,
) -> Result<ElboGrad> {
    let p = arch.param_count();
    if params.mu.len() != p || params.rho.len() != p {
        return Err(shape_err(format!("variational params must have length {p}")));
    }
    if noise_draws.cols() != p || noise_draws.rows() == 0 {
        return Err(shape_err(format!(
            "noise draws are {}x{}, expected M x {p}",
            noise_draws.rows(),
            noise_draws.cols()
        )));
    }
    if batch.is_empty() {
        return Err(domain_err("empty mini-batch"));
    }
    if data.state_dim() != Some(arch.input_dim) || data.action_count != arch.output_dim {
        return Err(shape_err("dataset does not match the network architecture"));
    }
    let m = noise_draws.rows();
    let scale = data.len() as f64 / batch.len() as f64;
    let sd: Vec<f64> = params.rho.iter().map(|&r| softplus(r)).collect();

    let mut trace = Trace::new(arch);
    let mut w = vec![0.0; p];
    let mut g = vec![0.0; p];
    let mut grad_mu = vec![0.0; p];
    let mut grad_rho = vec![0.0; p];
    let mut ll_sum = 0.0;
    for k in 0..m {
        let eps = noise_draws.row(k);
        for j in 0..p {
            w[j] = params.mu[j] + sd[j] * eps[j];
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        ll_sum += loglik_and_grad(&w, &mut trace, data, batch, config.noise_variance, scale, &mut g);
        for j in 0..p {
            grad_mu[j] += g[j];
            grad_rho[j] += g[j] * eps[j];
        }
    }
    let inv_m = 1.0 / m as f64;
    let pv = config.prior_std * config.prior_std;
    for j in 0..p {
        let s = sd[j];
        grad_mu[j] = grad_mu[j] * inv_m - params.mu[j] / pv;
        let dkl_ds = -1.0 / s + s / pv;
        grad_rho[j] = (grad_rho[j] * inv_m - dkl_ds) * sigmoid(params.rho[j]);
    }
    let elbo = ll_sum * inv_m - kl_to_prior(params, config.prior_std);
    if !elbo.is_finite() || grad_mu.iter().chain(&grad_rho).any(|v| !v.is_finite()) {
        return Err(PblError::Divergence {
            epoch: 0,
            last_finite_epoch: None,
        });
    }
    Ok(ElboGrad {
        elbo,
        grad_mu,
        grad_rho,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnnFit {
    pub params: VariationalParams,
    pub posterior: GaussianPosterior,
    /// Mean negative ELBO over the mini-batches of each epoch.
    pub loss_history: Vec<f64>,
}

/// Trains the variational network by SGD ascent on the ELBO.
pub fn bnn_fit(data: &Dataset, arch: &MlpArchitecture, config: &BnnTrainConfig) -> Result<BnnFit> {
    config.validate()?;
    if data.is_empty() {
        return Err(PblError::InsufficientData("cannot train a BNN on an empty dataset".into()));
    }
    let seed = RandomSeed(config.seed);
    let mut params = bnn_init(arch, seed.derive(&[0]));
    let mut shuffle_rng = seed.derive(&[1]).rng();
    let mut noise_rng = seed.derive(&[2]).rng();
    let p = arch.param_count();
    let n = data.len();
    let batch_size = config.batch_size.min(n);

    let mut order: Vec<usize> = (0..n).collect();
    let mut noise = Matrix::zeros(config.mc_samples, p);
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut last_finite = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(batch_size) {
            for r in 0..config.mc_samples {
                noise
                    .row_mut(r)
                    .iter_mut()
                    .for_each(|v| *v = standard_normal(&mut noise_rng));
            }
            let eg = elbo_and_grad(&params, arch, data, batch, config, &noise).map_err(|e| match e {
                PblError::Divergence { .. } => PblError::Divergence {
                    epoch,
                    last_finite_epoch: last_finite,
                },
                other => other,
            })?;
            for j in 0..p {
                params.mu[j] += config.learning_rate * eg.grad_mu[j];
                params.rho[j] += config.learning_rate * eg.grad_rho[j];
            }
            total += eg.elbo;
            batches += 1;
        }
        let loss = -total / batches as f64;
        if !loss.is_finite() || params.mu.iter().chain(&params.rho).any(|v| !v.is_finite()) {
            return Err(PblError::Divergence {
                epoch,
                last_finite_epoch: last_finite,
            });
        }
        last_finite = Some(epoch);
        loss_history.push(loss);
    }
    let posterior = params.posterior()?;
    Ok(BnnFit {
        params,
        posterior,
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count() {
        let arch = MlpArchitecture::new(3, vec![16, 16], 2).unwrap();
        assert_eq!(arch.param_count(), 370);
    }

    #[test]
    fn init_is_deterministic() {
        let arch = MlpArchitecture::default_for(3, 2).unwrap();
        let a = bnn_init(&arch, RandomSeed(5));
        let b = bnn_init(&arch, RandomSeed(5));
        assert_eq!(a, b);
        assert!(a.rho.iter().all(|&r| r == -3.0));
        assert!((softplus(-3.0) - 0.048_587_4).abs() < 1e-6);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = MlpArchitecture::default_for(3, 2).unwrap();
        let w = vec![0.0; arch.param_count()];
        assert_eq!(forward(&w, &arch, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_set_single_unit() {
        let arch = MlpArchitecture::new(1, vec![1], 1).unwrap();
        // layer 1: w=1, b=0; layer 2: w=1, b=0
        let w = vec![1.0, 0.0, 1.0, 0.0];
        assert_eq!(forward(&w, &arch, &[2.0]).unwrap(), vec![2.0]);
        assert_eq!(forward(&w, &arch, &[-2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn shape_errors() {
        let arch = MlpArchitecture::new(2, vec![3], 2).unwrap();
        assert!(forward(&[0.0; 3], &arch, &[1.0, 2.0]).is_err());
        assert!(forward(&vec![0.0; arch.param_count()], &arch, &[1.0]).is_err());
        assert!(MlpArchitecture::new(2, vec![0], 2).is_err());
    }

    #[test]
    fn kl_zero_at_prior() {
        let p = VariationalParams {
            mu: vec![0.0; 4],
            rho: vec![softplus_inv(0.7); 4],
        };
        assert!(kl_to_prior(&p, 0.7).abs() < 1e-12);
        let q = VariationalParams {
            mu: vec![0.1, 0.0, 0.0, 0.0],
            rho: vec![softplus_inv(0.7); 4],
        };
        assert!(kl_to_prior(&q, 0.7) > 0.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus_inv(softplus(-3.0)) + 3.0).abs() < 1e-12);
    }
}
