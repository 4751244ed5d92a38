use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::Normalizer;
use super::{DynamicsModel, Prediction};
use crate::error::{check_dim, Result};

/// Soft lower bound on predicted log-variances (normalized target space).
pub const LOG_VAR_MIN: f64 = -10.0;
/// Soft upper bound on predicted log-variances (normalized target space).
pub const LOG_VAR_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`
    #[default]
    Swish,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Swish => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Smoothly squash a raw output into `(LOG_VAR_MIN, LOG_VAR_MAX)`.
/// Returns the value and its derivative.
fn soft_clamp(raw: f64) -> (f64, f64) {
    let upper = LOG_VAR_MAX - softplus(LOG_VAR_MAX - raw);
    let value = LOG_VAR_MIN + softplus(upper - LOG_VAR_MIN);
    if value > LOG_VAR_MAX {
        return (LOG_VAR_MAX, 0.0);
    }
    let grad = sigmoid(LOG_VAR_MAX - raw) * sigmoid(upper - LOG_VAR_MIN);
    (value, grad)
}

/// Feed-forward network predicting a diagonal Gaussian over the normalized
/// state delta. Parameters are stored flat, layer by layer, each layer as a
/// row-major `out x in` weight block followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    state_dim: usize,
    action_dim: usize,
    hidden: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    normalizer: Normalizer,
}

struct Trace {
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
    /// Layer inputs; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl MlpModel {
    /// All-zero parameters with identity normalization.
    pub fn zeros(state_dim: usize, action_dim: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut model = Self {
            state_dim,
            action_dim,
            hidden: hidden.to_vec(),
            activation,
            params: Vec::new(),
            normalizer: Normalizer::identity(state_dim + action_dim, state_dim),
        };
        model.params = vec![0.0; model.param_count()];
        model
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn random<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut model = Self::zeros(state_dim, action_dim, hidden, activation);
        let sizes = model.layer_sizes();
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (1.0 / fan_in as f64).sqrt();
            for p in &mut model.params[offset..offset + fan_in * fan_out] {
                let z: f64 = rng.sample(StandardNormal);
                *p = scale * z;
            }
            offset += fan_in * fan_out + fan_out;
        }
        model
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.state_dim + self.action_dim];
        sizes.extend(&self.hidden);
        sizes.push(2 * self.state_dim);
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        check_dim("network parameters", self.param_count(), params.len())?;
        self.params = params;
        Ok(())
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) -> Result<()> {
        check_dim("normalizer inputs", self.state_dim + self.action_dim, normalizer.input_mean.len())?;
        check_dim("normalizer targets", self.state_dim, normalizer.target_mean.len())?;
        self.normalizer = normalizer;
        Ok(())
    }

    fn forward(&self, input: &[f64], keep: bool) -> Trace {
        let sizes = self.layer_sizes();
        let last = sizes.len() - 2;
        let mut trace = Trace {
            pre: Vec::new(),
            inputs: Vec::new(),
            output: Vec::new(),
        };
        let mut x = input.to_vec();
        let mut offset = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let z: Vec<f64> = weights
                .chunks_exact(n_in)
                .zip(bias)
                .map(|(row, b)| b + row.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            if keep {
                trace.inputs.push(std::mem::take(&mut x));
            }
            if l == last {
                trace.output = z;
            } else {
                x = z.iter().map(|v| self.activation.apply(*v)).collect();
                if keep {
                    trace.pre.push(z);
                }
            }
        }
        trace
    }

    /// Normalized-space mean and clamped log-variance for a normalized input.
    pub fn forward_normalized(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let out = self.forward(input, false).output;
        let d = self.state_dim;
        let log_var = out[d..].iter().map(|r| soft_clamp(*r).0).collect();
        (out[..d].to_vec(), log_var)
    }

    /// Gaussian negative log-likelihood (without the constant) of one
    /// normalized target, averaged over the batch, plus
    /// `weight_decay * sum W^2` over weight matrices. Returns the loss and its
    /// gradient with respect to the flat parameter vector.
    pub fn loss_and_grad(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>], weight_decay: f64) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let sizes = self.layer_sizes();
        let d = self.state_dim;
        let n = inputs.len() as f64;
        let mut loss = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            let trace = self.forward(x, true);
            let mut delta = vec![0.0; 2 * d];
            for j in 0..d {
                let mu = trace.output[j];
                let (lv, dlv) = soft_clamp(trace.output[d + j]);
                let inv = (-lv).exp();
                let r = y[j] - mu;
                loss += 0.5 * (r * r * inv + lv) / n;
                delta[j] = -r * inv / n;
                delta[d + j] = 0.5 * (1.0 - r * r * inv) * dlv / n;
            }
            // backward, last layer first
            let mut offset = self.params.len();
            for l in (0..sizes.len() - 1).rev() {
                let (n_in, n_out) = (sizes[l], sizes[l + 1]);
                offset -= n_in * n_out + n_out;
                let input = &trace.inputs[l];
                for o in 0..n_out {
                    let row = offset + o * n_in;
                    for i in 0..n_in {
                        grad[row + i] += delta[o] * input[i];
                    }
                    grad[offset + n_in * n_out + o] += delta[o];
                }
                if l > 0 {
                    let pre = &trace.pre[l - 1];
                    delta = (0..n_in)
                        .map(|i| {
                            let back: f64 = (0..n_out)
                                .map(|o| self.params[offset + o * n_in + i] * delta[o])
                                .sum();
                            back * self.activation.derivative(pre[i])
                        })
                        .collect();
                }
            }
        }
        if weight_decay > 0.0 {
            let mut offset = 0;
            for w in sizes.windows(2) {
                let count = w[0] * w[1];
                for p in offset..offset + count {
                    loss += weight_decay * self.params[p] * self.params[p];
                    grad[p] += 2.0 * weight_decay * self.params[p];
                }
                offset += count + w[1];
            }
        }
        (loss, grad)
    }

    /// Raw-space Gaussian NLL of an observed next state, including the
    /// `0.5 log 2 pi` constant per dimension.
    pub fn transition_nll(&self, state: &[f64], action: &[f64], next: &[f64]) -> f64 {
        let p = self.predict(state, action);
        p.mean
            .iter()
            .zip(&p.variance)
            .zip(next)
            .map(|((m, v), y)| 0.5 * ((y - m).powi(2) / v + v.ln() + (2.0 * std::f64::consts::PI).ln()))
            .sum()
    }
}

impl DynamicsModel for MlpModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn predict(&self, state: &[f64], action: &[f64]) -> Prediction {
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        let (mu, log_var) = self.forward_normalized(&self.normalizer.normalize_input(&x));
        let delta = self.normalizer.denormalize_target(&mu);
        let mean = state.iter().zip(&delta).map(|(s, d)| s + d).collect();
        let variance = log_var
            .iter()
            .zip(&self.normalizer.target_std)
            .map(|(lv, s)| lv.exp() * s * s)
            .collect();
        Prediction { mean, variance }
    }
}

/// First-order optimizer with per-parameter adaptive step sizes.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub(crate) fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
