//! Shared value types: action sequences, bounds, particle weights, rollout
//! batches and the optimality configuration triple.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Tolerance used when checking that a weight vector lies on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Per-dimension box bounds on a single control vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        check_dim("action bounds", low.len(), high.len())?;
        if low.is_empty() {
            return Err(Error::InvalidValue {
                what: "action bounds",
                reason: "zero-dimensional action space".into(),
            });
        }
        for (l, h) in low.iter().zip(&high) {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::InvalidValue {
                    what: "action bounds",
                    reason: format!("need finite low <= high, got [{l}, {h}]"),
                });
            }
        }
        Ok(Self { low, high })
    }

    /// Same `[-limit, limit]` interval on every dimension.
    pub fn symmetric(dim: usize, limit: f64) -> Result<Self> {
        Self::new(vec![-limit; dim], vec![limit; dim])
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    /// Clamp a flattened `T x d_a` buffer in place, dimension by dimension.
    pub fn clamp_in_place(&self, values: &mut [f64]) {
        let d = self.dim();
        for (j, v) in values.iter_mut().enumerate() {
            let c = j % d;
            *v = v.clamp(self.low[c], self.high[c]);
        }
    }

    pub fn contains(&self, action: &[f64]) -> bool {
        action.len() == self.dim()
            && action
                .iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(a, (l, h))| *a >= *l && *a <= *h)
    }

    /// The zero action, or the box midpoint on any dimension where zero is
    /// outside the bounds.
    pub fn neutral_action(&self) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| if *l <= 0.0 && 0.0 <= *h { 0.0 } else { 0.5 * (l + h) })
            .collect()
    }
}

/// A planned control sequence, `T` steps of `d_a` controls stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSequence {
    horizon: usize,
    action_dim: usize,
    values: Vec<f64>,
}

impl ActionSequence {
    pub fn new(horizon: usize, action_dim: usize, values: Vec<f64>) -> Result<Self> {
        if horizon == 0 || action_dim == 0 {
            return Err(Error::InvalidValue {
                what: "action sequence",
                reason: "horizon and action_dim must be positive".into(),
            });
        }
        check_dim("action sequence length", horizon * action_dim, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue {
                what: "action sequence",
                reason: "non-finite entry".into(),
            });
        }
        Ok(Self {
            horizon,
            action_dim,
            values,
        })
    }

    pub fn zeros(horizon: usize, action_dim: usize) -> Self {
        Self {
            horizon,
            action_dim,
            values: vec![0.0; horizon * action_dim],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Control vector applied at step `t` (zero-based).
    pub fn step(&self, t: usize) -> &[f64] {
        &self.values[t * self.action_dim..(t + 1) * self.action_dim]
    }

    pub fn first(&self) -> &[f64] {
        self.step(0)
    }

    pub fn clip(&mut self, bounds: &ActionBounds) {
        debug_assert_eq!(bounds.dim(), self.action_dim);
        bounds.clamp_in_place(&mut self.values);
    }
}

/// Normalized, nonnegative importance weights over `K` particles.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleWeights(Vec<f64>);

impl ParticleWeights {
    /// Normalize a nonnegative vector onto the simplex.
    pub fn from_unnormalized(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidValue {
                what: "particle weights",
                reason: "entries must be finite and nonnegative".into(),
            });
        }
        let total: f64 = raw.iter().sum();
        if raw.is_empty() || total <= 0.0 {
            return Err(Error::AllZeroWeights);
        }
        Ok(Self(raw.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Effective sample size `1 / sum w^2`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.0.iter().map(|w| w * w).sum::<f64>()
    }
}

/// States and summed rewards for `K` candidates times `P` rollouts.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub(crate) candidates: usize,
    pub(crate) rollouts: usize,
    pub(crate) horizon: usize,
    pub(crate) state_dim: usize,
    /// `K x P x (T + 1) x d_s`, row-major.
    pub(crate) states: Vec<f64>,
    /// `K x P` per-rollout summed rewards.
    pub(crate) rewards: Vec<f64>,
    /// Rollouts that produced a non-finite state and were given the floor reward.
    pub(crate) flagged: Vec<bool>,
}

impl TrajectoryBatch {
    /// Build a batch from rewards alone; states are left empty. Useful for
    /// exercising the estimators without running dynamics.
    pub fn from_rewards(rewards: Vec<Vec<f64>>) -> Result<Self> {
        let candidates = rewards.len();
        let rollouts = rewards.first().map_or(0, Vec::len);
        for row in &rewards {
            check_dim("rollouts per candidate", rollouts, row.len())?;
        }
        let flat: Vec<f64> = rewards.into_iter().flatten().collect();
        if flat.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidValue {
                what: "rewards",
                reason: "non-finite reward".into(),
            });
        }
        Ok(Self {
            candidates,
            rollouts,
            horizon: 0,
            state_dim: 0,
            states: Vec::new(),
            flagged: vec![false; flat.len()],
            rewards: flat,
        })
    }

    pub fn candidates(&self) -> usize {
        self.candidates
    }

    pub fn rollouts(&self) -> usize {
        self.rollouts
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn reward(&self, k: usize, i: usize) -> f64 {
        self.rewards[k * self.rollouts + i]
    }

    /// The `P` rollout rewards of candidate `k`.
    pub fn candidate_rewards(&self, k: usize) -> &[f64] {
        &self.rewards[k * self.rollouts..(k + 1) * self.rollouts]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn is_flagged(&self, k: usize, i: usize) -> bool {
        self.flagged[k * self.rollouts + i]
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }

    /// State at step `t` of rollout `i` of candidate `k`.
    pub fn state(&self, k: usize, i: usize, t: usize) -> &[f64] {
        let base = ((k * self.rollouts + i) * (self.horizon + 1) + t) * self.state_dim;
        &self.states[base..base + self.state_dim]
    }

    /// The `T + 1` recorded states of one rollout, flattened.
    pub fn path(&self, k: usize, i: usize) -> &[f64] {
        let len = (self.horizon + 1) * self.state_dim;
        let base = (k * self.rollouts + i) * len;
        &self.states[base..base + len]
    }
}

/// Which optimality likelihood `f(r)` turns rewards into weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimalityKind {
    #[serde(rename = "CEM")]
    Cem,
    #[serde(rename = "MPPI")]
    Mppi,
    #[serde(rename = "PropCEM")]
    PropCem,
    #[serde(rename = "CMAES")]
    Cmaes,
}

impl fmt::Display for OptimalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimalityKind::Cem => "CEM",
            OptimalityKind::Mppi => "MPPI",
            OptimalityKind::PropCem => "PropCEM",
            OptimalityKind::Cmaes => "CMAES",
        })
    }
}

impl FromStr for OptimalityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "CEM" => Ok(OptimalityKind::Cem),
            "MPPI" => Ok(OptimalityKind::Mppi),
            "PROPCEM" => Ok(OptimalityKind::PropCem),
            "CMAES" => Ok(OptimalityKind::Cmaes),
            _ => Err(Error::invalid_config("optimality", format!("unknown kind `{s}`"))),
        }
    }
}

/// The optimality half of a `VIMPC(optimality, dist, max_ent)` triple,
/// plus the entropy regularization weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityConfig {
    pub kind: OptimalityKind,
    /// Elite ratio `e` in `(0, 1]`, used by CEM and CMA-ES.
    pub elite_fraction: f64,
    /// Inverse step size `lambda > 0`, used by MPPI.
    pub lambda: f64,
    /// Entropy regularization weight `kappa >= 0`.
    pub kappa: f64,
    pub max_ent: bool,
}

impl OptimalityConfig {
    pub fn new(kind: OptimalityKind) -> Self {
        Self {
            kind,
            elite_fraction: 0.1,
            lambda: 0.1,
            kappa: 0.0,
            max_ent: false,
        }
    }

    pub fn cem(elite_fraction: f64) -> Self {
        Self {
            elite_fraction,
            ..Self::new(OptimalityKind::Cem)
        }
    }

    pub fn mppi(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::new(OptimalityKind::Mppi)
        }
    }

    /// Enable the entropy bonus with weight `kappa`.
    pub fn with_entropy(mut self, kappa: f64) -> Self {
        self.max_ent = true;
        self.kappa = kappa;
        self
    }

    /// The weight actually applied to the entropy bonus.
    pub fn entropy_weight(&self) -> f64 {
        if self.max_ent {
            self.kappa
        } else {
            0.0
        }
    }
}

/// Dimensions and control bounds of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub bounds: ActionBounds,
}

/// Check an optimality configuration against an environment.
pub fn validate_config(cfg: &OptimalityConfig, env: &EnvSpec) -> Result<OptimalityConfig> {
    if !(cfg.lambda.is_finite() && cfg.lambda > 0.0) {
        return Err(Error::invalid_config("lambda", format!("must be > 0, got {}", cfg.lambda)));
    }
    if !(cfg.elite_fraction > 0.0 && cfg.elite_fraction <= 1.0) {
        return Err(Error::invalid_config(
            "elite_fraction",
            format!("must lie in (0, 1], got {}", cfg.elite_fraction),
        ));
    }
    if !(cfg.kappa.is_finite() && cfg.kappa >= 0.0) {
        return Err(Error::invalid_config("kappa", format!("must be >= 0, got {}", cfg.kappa)));
    }
    if !cfg.max_ent && cfg.kappa != 0.0 {
        return Err(Error::invalid_config(
            "kappa",
            "must be 0 when max_ent is false",
        ));
    }
    if env.state_dim == 0 || env.action_dim == 0 {
        return Err(Error::invalid_config("env", "state and action dimensions must be positive"));
    }
    if env.bounds.dim() != env.action_dim {
        return Err(Error::invalid_config(
            "bounds",
            format!("expected {} dimensions, got {}", env.action_dim, env.bounds.dim()),
        ));
    }
    Ok(*cfg)
}
