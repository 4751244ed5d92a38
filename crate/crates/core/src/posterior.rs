//! Gaussian-mixture variational distribution over action sequences.
//!
//! A single component is the ordinary Gaussian sampling distribution used by
//! CEM and MPPI; several components give the mixture ("action ensemble")
//! posterior. Covariances are diagonal throughout.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::optimality::min_max_normalize;
use crate::types::{ActionBounds, ActionSequence, ParticleWeights, SIMPLEX_TOLERANCE};

/// Smallest variance any mixture coordinate may take.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Components whose total responsibility mass falls below this are left
/// untouched by a weighted fit.
pub const DEGENERATE_MASS: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mixture weights, means and diagonal variances of `q(a; phi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    horizon: usize,
    action_dim: usize,
    mixture: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GmmParams {
    pub fn new(
        horizon: usize,
        action_dim: usize,
        mixture: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = mixture.len();
        if m == 0 {
            return Err(Error::InvalidValue {
                what: "mixture",
                reason: "at least one component required".into(),
            });
        }
        if horizon == 0 || action_dim == 0 {
            return Err(Error::InvalidValue {
                what: "mixture",
                reason: "horizon and action_dim must be positive".into(),
            });
        }
        check_dim("mixture means", m, means.len())?;
        check_dim("mixture variances", m, variances.len())?;
        let dim = horizon * action_dim;
        for (mu, var) in means.iter().zip(&variances) {
            check_dim("component mean", dim, mu.len())?;
            check_dim("component variance", dim, var.len())?;
            if mu.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidValue {
                    what: "component mean",
                    reason: "non-finite entry".into(),
                });
            }
            if var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidValue {
                    what: "component variance",
                    reason: "variances must be finite and positive".into(),
                });
            }
        }
        let total: f64 = mixture.iter().sum();
        if mixture.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (total - 1.0).abs() > SIMPLEX_TOLERANCE
        {
            return Err(Error::InvalidValue {
                what: "mixture",
                reason: format!("weights must be a probability vector, sum = {total}"),
            });
        }
        Ok(Self {
            horizon,
            action_dim,
            mixture,
            means,
            variances,
        })
    }

    /// Uniform mixture with the same variance on every coordinate.
    pub fn with_shared_variance(
        horizon: usize,
        action_dim: usize,
        means: Vec<Vec<f64>>,
        variance: f64,
    ) -> Result<Self> {
        let m = means.len().max(1);
        let variances = vec![vec![variance; horizon * action_dim]; means.len()];
        Self::new(horizon, action_dim, vec![1.0 / m as f64; means.len()], means, variances)
    }

    pub fn components(&self) -> usize {
        self.mixture.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Flattened dimension `T * d_a`.
    pub fn dim(&self) -> usize {
        self.horizon * self.action_dim
    }

    pub fn mixture(&self) -> &[f64] {
        &self.mixture
    }

    pub fn mean(&self, m: usize) -> &[f64] {
        &self.means[m]
    }

    pub fn variance(&self, m: usize) -> &[f64] {
        &self.variances[m]
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Index of the component with the largest mixture weight (lowest index
    /// on ties).
    pub fn dominant_component(&self) -> usize {
        let mut best = 0;
        for (m, p) in self.mixture.iter().enumerate() {
            if *p > self.mixture[best] {
                best = m;
            }
        }
        best
    }

    /// Draw a component index by inverting the mixture CDF with a single
    /// uniform draw.
    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (m, p) in self.mixture.iter().enumerate() {
            if *p > 0.0 {
                last_positive = m;
                acc += p;
                if u < acc {
                    return m;
                }
            }
        }
        last_positive
    }

    /// Draw `k` action sequences and clip them to `bounds`.
    ///
    /// Each draw consumes one uniform for the component, then `T * d_a`
    /// standard normals in row-major order.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        k: usize,
        bounds: &ActionBounds,
        rng: &mut R,
    ) -> Vec<ActionSequence> {
        assert_eq!(bounds.dim(), self.action_dim, "bounds dimension mismatch");
        (0..k)
            .map(|_| {
                let m = self.sample_component(rng);
                let mut values: Vec<f64> = self.means[m]
                    .iter()
                    .zip(&self.variances[m])
                    .map(|(mu, var)| {
                        let z: f64 = rng.sample(StandardNormal);
                        mu + var.sqrt() * z
                    })
                    .collect();
                bounds.clamp_in_place(&mut values);
                ActionSequence::new(self.horizon, self.action_dim, values)
                    .expect("finite sample of a valid mixture")
            })
            .collect()
    }

    /// `log pi_m + log N(a; mu_m, Sigma_m)` for every component.
    pub fn component_log_densities(&self, a: &[f64]) -> Vec<f64> {
        debug_assert_eq!(a.len(), self.dim());
        self.mixture
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(p, (mu, var))| {
                if *p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let quad: f64 = a
                    .iter()
                    .zip(mu.iter().zip(var))
                    .map(|(x, (m, v))| (x - m) * (x - m) / v + v.ln())
                    .sum();
                p.ln() - 0.5 * (quad + a.len() as f64 * LN_2PI)
            })
            .collect()
    }

    /// `log q(a; phi)` via a max-shifted log-sum-exp.
    pub fn log_density(&self, a: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_densities(a))
    }

    /// Posterior component membership probabilities of `a`.
    pub fn responsibilities(&self, a: &[f64]) -> Vec<f64> {
        let logs = self.component_log_densities(a);
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            return vec![1.0 / logs.len() as f64; logs.len()];
        }
        logs.into_iter().map(|l| (l - lse).exp()).collect()
    }

    pub(crate) fn set_mixture(&mut self, mixture: Vec<f64>) {
        self.mixture = mixture;
    }

    pub(crate) fn means_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.means
    }

    pub(crate) fn variances_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.variances
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Sampled action sequences paired with normalized weights.
#[derive(Debug, Clone)]
pub struct WeightedParticles {
    actions: Vec<ActionSequence>,
    weights: ParticleWeights,
}

impl WeightedParticles {
    pub fn new(actions: Vec<ActionSequence>, weights: ParticleWeights) -> Result<Self> {
        check_dim("particle count", actions.len(), weights.len())?;
        Ok(Self { actions, weights })
    }

    pub fn actions(&self) -> &[ActionSequence] {
        &self.actions
    }

    pub fn weights(&self) -> &ParticleWeights {
        &self.weights
    }
}

/// Entropy bonus `exp(kappa * nq_k)` with `nq_k` the min-max normalized
/// `-log q(a_k)`. Values lie in `[1, e^kappa]`; the least likely sample gets
/// the largest bonus.
pub fn entropy_bonus(log_q: &[f64], kappa: f64) -> Vec<f64> {
    let neg: Vec<f64> = log_q.iter().map(|l| -l).collect();
    min_max_normalize(&neg)
        .into_iter()
        .map(|nq| (kappa * nq).exp())
        .collect()
}

/// Combine transformed likelihoods with the entropy bonus and normalize.
pub fn update_particle_weights(w_prime: &[f64], log_q: &[f64], kappa: f64) -> Result<ParticleWeights> {
    check_dim("log densities", w_prime.len(), log_q.len())?;
    if w_prime.iter().sum::<f64>() <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let raw = if kappa == 0.0 {
        w_prime.to_vec()
    } else {
        w_prime
            .iter()
            .zip(entropy_bonus(log_q, kappa))
            .map(|(w, b)| w * b)
            .collect()
    };
    ParticleWeights::from_unnormalized(raw)
}

/// Result of one weighted EM step.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub params: GmmParams,
    /// Components whose responsibility mass was below [`DEGENERATE_MASS`];
    /// their means and variances were carried over from the previous step.
    pub degenerate: Vec<usize>,
}

/// One weighted EM step: responsibilities under `prev`, then
/// responsibility-and-weight averaged means, variances and mixture weights.
pub fn gmm_fit_weighted(
    particles: &WeightedParticles,
    prev: &GmmParams,
    variance_floor: f64,
) -> Result<GmmFit> {
    let dim = prev.dim();
    let m_count = prev.components();
    for a in particles.actions() {
        check_dim("particle dimension", dim, a.as_slice().len())?;
    }
    let w = particles.weights().as_slice();

    // eta[k][m] * w_k
    let weighted_resp: Vec<Vec<f64>> = particles
        .actions()
        .iter()
        .zip(w)
        .map(|(a, wk)| {
            prev.responsibilities(a.as_slice())
                .into_iter()
                .map(|eta| eta * wk)
                .collect()
        })
        .collect();

    let mass: Vec<f64> = (0..m_count)
        .map(|m| weighted_resp.iter().map(|row| row[m]).sum())
        .collect();

    let mut next = prev.clone();
    let mut degenerate = Vec::new();
    for m in 0..m_count {
        if mass[m] < DEGENERATE_MASS {
            degenerate.push(m);
            continue;
        }
        let mut mu = vec![0.0; dim];
        for (a, row) in particles.actions().iter().zip(&weighted_resp) {
            let omega = row[m] / mass[m];
            for (acc, x) in mu.iter_mut().zip(a.as_slice()) {
                *acc += omega * x;
            }
        }
        let mut var = vec![0.0; dim];
        for (a, row) in particles.actions().iter().zip(&weighted_resp) {
            let omega = row[m] / mass[m];
            for ((acc, x), c) in var.iter_mut().zip(a.as_slice()).zip(&mu) {
                *acc += omega * (x - c) * (x - c);
            }
        }
        for v in &mut var {
            *v = v.max(variance_floor);
        }
        next.means_mut()[m] = mu;
        next.variances_mut()[m] = var;
    }
    let total: f64 = mass.iter().sum();
    next.set_mixture(mass.iter().map(|n| n / total).collect());
    Ok(GmmFit {
        params: next,
        degenerate,
    })
}
