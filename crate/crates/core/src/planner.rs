//! The variational-inference MPC loop: sample candidates from the mixture,
//! roll them out, turn rewards into particle weights and refit the mixture.
//! Also the receding-horizon helpers used between control steps.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsModel, EnsemblePosterior};
use crate::error::{check_dim, Error, Result};
use crate::optimality::{candidate_likelihoods, estimate_w_prime, Estimator};
use crate::posterior::{gmm_fit_weighted, update_particle_weights, GmmParams, WeightedParticles, VARIANCE_FLOOR};
use crate::sampler::{ts1_rollout, RewardFn, RolloutPlan, DEFAULT_NONFINITE_REWARD};
use crate::types::{validate_config, ActionBounds, ActionSequence, EnvSpec, OptimalityConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub optimality: OptimalityConfig,
    /// Mixture components `M`; 1 is the single-Gaussian planner.
    pub components: usize,
    /// Candidates per iteration `K`.
    pub samples: usize,
    /// Rollouts per candidate `P`.
    pub rollouts: usize,
    /// Optimization iterations `U`.
    pub iterations: usize,
    /// Planning horizon `T`.
    pub horizon: usize,
    /// Initial per-coordinate variance, also used by warm-start resets.
    pub init_variance: f64,
    pub variance_floor: f64,
    pub estimator: Estimator,
    pub nonfinite_reward: f64,
    /// Execute the mean of the heaviest component instead of a sample.
    pub deterministic_execution: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            optimality: OptimalityConfig::cem(0.1).with_entropy(0.5),
            components: 5,
            samples: 500,
            rollouts: 20,
            iterations: 5,
            horizon: 30,
            init_variance: 1.0,
            variance_floor: VARIANCE_FLOOR,
            estimator: Estimator::MeanThenTransform,
            nonfinite_reward: DEFAULT_NONFINITE_REWARD,
            deterministic_execution: false,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self, env: &EnvSpec) -> Result<()> {
        validate_config(&self.optimality, env)?;
        for (name, v) in [
            ("components", self.components),
            ("samples", self.samples),
            ("rollouts", self.rollouts),
            ("iterations", self.iterations),
            ("horizon", self.horizon),
        ] {
            if v == 0 {
                return Err(Error::invalid_config(name, "must be >= 1"));
            }
        }
        if !(self.init_variance > 0.0 && self.init_variance.is_finite()) {
            return Err(Error::invalid_config("init_variance", "must be > 0"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::invalid_config("variance_floor", "must be > 0"));
        }
        if !self.nonfinite_reward.is_finite() {
            return Err(Error::invalid_config("nonfinite_reward", "must be finite"));
        }
        Ok(())
    }
}

/// What happened in one optimization iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// Best per-candidate mean rollout reward.
    pub best_reward: f64,
    /// Average of the per-candidate mean rewards.
    pub mean_reward: f64,
    /// Effective sample size `1 / sum w^2` of the particle weights.
    pub ess: f64,
    /// Mixture weights after the refit.
    pub mixture: Vec<f64>,
    pub nonfinite_rollouts: usize,
    pub degenerate_components: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub params: GmmParams,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// `U + 1` mixture snapshots: the initial one, then one per iteration.
    pub snapshots: Vec<GmmParams>,
}

impl PlanOutcome {
    pub fn mean_ess(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.ess).sum::<f64>() / self.diagnostics.len().max(1) as f64
    }
}

/// Run `U` iterations from `init` at state `s1`.
///
/// Per iteration the generator supplies `K` mixture samples followed by one
/// `u64` seed for the rollout substreams.
pub fn plan<M, F, R>(
    s1: &[f64],
    init: &GmmParams,
    posterior: &EnsemblePosterior<M>,
    cfg: &PlannerConfig,
    bounds: &ActionBounds,
    reward: &F,
    rng: &mut R,
) -> Result<PlanOutcome>
where
    M: DynamicsModel,
    F: RewardFn + ?Sized,
    R: Rng + ?Sized,
{
    check_dim("mixture components", cfg.components, init.components())?;
    check_dim("mixture horizon", cfg.horizon, init.horizon())?;
    check_dim("mixture action dim", posterior.action_dim(), init.action_dim())?;
    check_dim("bounds", init.action_dim(), bounds.dim())?;

    let kappa = cfg.optimality.entropy_weight();
    let mut phi = init.clone();
    let mut snapshots = vec![phi.clone()];
    let mut diagnostics = Vec::with_capacity(cfg.iterations);
    let mut failed_iterations = 0;

    for iteration in 0..cfg.iterations {
        let actions = phi.sample(cfg.samples, bounds, rng);
        let rollout = RolloutPlan {
            rollouts: cfg.rollouts,
            seed: rng.random(),
            nonfinite_reward: cfg.nonfinite_reward,
        };
        let batch = ts1_rollout(posterior, s1, &actions, &rollout, reward)?;
        if batch.flagged_count() == batch.rewards().len() {
            failed_iterations += 1;
        }
        let mean_rewards = estimate_w_prime(&batch)?;
        let likelihood = candidate_likelihoods(&cfg.optimality, &batch, cfg.estimator)?;
        let log_q: Vec<f64> = if kappa > 0.0 {
            actions.iter().map(|a| phi.log_density(a.as_slice())).collect()
        } else {
            vec![0.0; actions.len()]
        };
        let weights = update_particle_weights(&likelihood, &log_q, kappa)?;
        let ess = weights.effective_sample_size();
        let fit = gmm_fit_weighted(&WeightedParticles::new(actions, weights)?, &phi, cfg.variance_floor)?;
        phi = fit.params;

        diagnostics.push(IterationDiagnostics {
            iteration,
            best_reward: mean_rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_reward: mean_rewards.iter().sum::<f64>() / mean_rewards.len() as f64,
            ess,
            mixture: phi.mixture().to_vec(),
            nonfinite_rollouts: batch.flagged_count(),
            degenerate_components: fit.degenerate,
        });
        snapshots.push(phi.clone());
    }

    if failed_iterations == cfg.iterations {
        return Err(Error::PlanFailed);
    }
    Ok(PlanOutcome {
        params: phi,
        diagnostics,
        snapshots,
    })
}

/// Fresh mixture: means drawn from `N(0, init_variance)`, every variance at
/// `init_variance`, uniform mixture weights.
pub fn init_gmm<R: Rng + ?Sized>(
    components: usize,
    horizon: usize,
    action_dim: usize,
    init_variance: f64,
    rng: &mut R,
) -> Result<GmmParams> {
    let sd = init_variance.sqrt();
    let means = (0..components)
        .map(|_| {
            (0..horizon * action_dim)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    sd * z
                })
                .collect()
        })
        .collect();
    GmmParams::with_shared_variance(horizon, action_dim, means, init_variance)
}

/// Shift every component mean one step earlier, append the neutral action
/// (zero, or the bounds' midpoint where zero is infeasible), and reset
/// variances and mixture weights.
pub fn warm_start_shift(phi: &GmmParams, init_variance: f64, bounds: &ActionBounds) -> Result<GmmParams> {
    let d = phi.action_dim();
    check_dim("bounds", d, bounds.dim())?;
    let tail = bounds.neutral_action();
    let means = phi
        .means()
        .iter()
        .map(|mu| {
            let mut shifted = mu[d..].to_vec();
            shifted.extend_from_slice(&tail);
            shifted
        })
        .collect();
    GmmParams::with_shared_variance(phi.horizon(), d, means, init_variance)
}

/// Pick the action sequence to execute: a clipped sample from the mixture,
/// or with `deterministic` the clipped mean of the heaviest component.
pub fn select_action<R: Rng + ?Sized>(
    phi: &GmmParams,
    bounds: &ActionBounds,
    deterministic: bool,
    rng: &mut R,
) -> ActionSequence {
    if deterministic {
        let mut values = phi.mean(phi.dominant_component()).to_vec();
        bounds.clamp_in_place(&mut values);
        ActionSequence::new(phi.horizon(), phi.action_dim(), values).expect("valid mixture mean")
    } else {
        phi.sample(1, bounds, rng).pop().expect("one sample")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::analytic_model;
    use crate::envs::Task;
    use crate::types::OptimalityKind;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_setup() -> (crate::dynamics::GroundTruth<crate::envs::Env>, ActionBounds) {
        let model = analytic_model("linear_test").unwrap();
        let bounds = model.0.spec().bounds;
        (model, bounds)
    }

    #[test]
    fn single_cem_step_is_elite_mean() {
        let (model, bounds) = linear_setup();
        let post = EnsemblePosterior::single(model.clone());
        let cfg = PlannerConfig {
            optimality: OptimalityConfig::cem(0.1),
            components: 1,
            samples: 40,
            rollouts: 1,
            iterations: 1,
            horizon: 4,
            init_variance: 0.25,
            ..PlannerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = init_gmm(1, 4, 1, 0.25, &mut rng).unwrap();
        let reward = |s: &[f64], a: &[f64], n: &[f64]| model.0.reward(s, a, n);
        let s1 = model.0.initial_state();

        let mut replay = rng.clone();
        let out = plan(&s1, &init, &post, &cfg, &bounds, &reward, &mut rng).unwrap();

        let actions = init.sample(40, &bounds, &mut replay);
        let seed: u64 = replay.random();
        let batch = ts1_rollout(&post, &s1, &actions, &RolloutPlan::new(1, seed), &reward).unwrap();
        let mut order: Vec<usize> = (0..40).collect();
        order.sort_by(|&a, &b| batch.reward(b, 0).partial_cmp(&batch.reward(a, 0)).unwrap());
        let elites = &order[..4];
        for j in 0..4 {
            let mean = elites.iter().map(|&k| actions[k].as_slice()[j]).sum::<f64>() / 4.0;
            assert_relative_eq!(out.params.mean(0)[j], mean, epsilon = 1e-12);
        }
        assert_eq!(out.snapshots.len(), 2);
    }

    #[test]
    fn warm_start_examples() {
        let bounds = ActionBounds::symmetric(1, 5.0).unwrap();
        let phi = GmmParams::new(
            3,
            1,
            vec![0.9, 0.1],
            vec![vec![1.0, 2.0, 3.0], vec![-1.0, -2.0, -3.0]],
            vec![vec![1e-6; 3], vec![0.01; 3]],
        )
        .unwrap();
        let out = warm_start_shift(&phi, 0.5, &bounds).unwrap();
        assert_eq!(out.mean(0), &[2.0, 3.0, 0.0]);
        assert_eq!(out.mean(1), &[-2.0, -3.0, 0.0]);
        assert_eq!(out.mixture(), &[0.5, 0.5]);
        assert!(out.variances().iter().flatten().all(|v| *v == 0.5));

        let again = warm_start_shift(&out, 0.5, &bounds).unwrap();
        assert_eq!(again.mixture(), out.mixture());
        assert_eq!(again.variances(), out.variances());
    }

    #[test]
    fn warm_start_uses_midpoint_when_zero_infeasible() {
        let bounds = ActionBounds::new(vec![1.0], vec![3.0]).unwrap();
        let phi = GmmParams::with_shared_variance(2, 1, vec![vec![1.5, 2.5]], 1.0).unwrap();
        assert_eq!(warm_start_shift(&phi, 1.0, &bounds).unwrap().mean(0), &[2.5, 2.0]);
    }

    #[test]
    fn init_gmm_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(init_gmm(1, 3, 2, 1.0, &mut rng).unwrap().mixture(), &[1.0]);

        let a = init_gmm(4, 5, 2, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = init_gmm(4, 5, 2, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let var = 2.0;
        let mut entries = Vec::new();
        for _ in 0..200 {
            entries.extend(init_gmm(5, 10, 1, var, &mut rng).unwrap().means().iter().flatten().copied());
        }
        let n = entries.len() as f64;
        let mean = entries.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * var.sqrt() / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn mismatched_init_rejected() {
        let (model, bounds) = linear_setup();
        let post = EnsemblePosterior::single(model);
        let cfg = PlannerConfig { components: 2, horizon: 3, ..PlannerConfig::default() };
        let init = GmmParams::with_shared_variance(3, 1, vec![vec![0.0; 3]], 1.0).unwrap();
        let r = |_: &[f64], _: &[f64], _: &[f64]| 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(plan(&[0.0, 0.0], &init, &post, &cfg, &bounds, &r, &mut rng).is_err());
    }

    #[test]
    fn all_nonfinite_is_plan_failure() {
        use crate::dynamics::Prediction;
        struct Blowup;
        impl DynamicsModel for Blowup {
            fn state_dim(&self) -> usize {
                1
            }
            fn action_dim(&self) -> usize {
                1
            }
            fn predict(&self, _: &[f64], _: &[f64]) -> Prediction {
                Prediction { mean: vec![f64::NAN], variance: vec![0.0] }
            }
        }
        let post = EnsemblePosterior::single(Blowup);
        let bounds = ActionBounds::symmetric(1, 1.0).unwrap();
        let cfg = PlannerConfig {
            optimality: OptimalityConfig::new(OptimalityKind::Mppi),
            components: 1,
            samples: 5,
            rollouts: 2,
            iterations: 2,
            horizon: 2,
            ..PlannerConfig::default()
        };
        let init = GmmParams::with_shared_variance(2, 1, vec![vec![0.0; 2]], 1.0).unwrap();
        let r = |_: &[f64], _: &[f64], _: &[f64]| 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            plan(&[0.0], &init, &post, &cfg, &bounds, &r, &mut rng),
            Err(Error::PlanFailed)
        ));
    }

    #[test]
    fn deterministic_execution_uses_heaviest_mean() {
        let phi = GmmParams::new(1, 1, vec![0.2, 0.8], vec![vec![0.3], vec![-0.7]], vec![vec![1.0], vec![1.0]]).unwrap();
        let bounds = ActionBounds::symmetric(1, 0.5).unwrap();
        let a = select_action(&phi, &bounds, true, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(a.as_slice(), &[-0.5]);
    }
}
