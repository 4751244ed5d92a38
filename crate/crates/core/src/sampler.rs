//! TS1 trajectory sampling: every candidate action sequence is rolled out
//! `P` times through the ensemble, drawing a fresh ensemble member at every
//! step of every rollout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{predict_next, DynamicsModel, EnsemblePosterior};
use crate::error::{check_dim, Error, Result};
use crate::types::{ActionSequence, TrajectoryBatch};

/// Reward of a single transition `s --a--> s'`.
pub trait RewardFn: Sync {
    fn reward(&self, state: &[f64], action: &[f64], next: &[f64]) -> f64;
}

impl<F> RewardFn for F
where
    F: Fn(&[f64], &[f64], &[f64]) -> f64 + Sync,
{
    fn reward(&self, state: &[f64], action: &[f64], next: &[f64]) -> f64 {
        self(state, action, next)
    }
}

/// Reward assigned to a rollout whose state became non-finite.
pub const DEFAULT_NONFINITE_REWARD: f64 = -1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutPlan {
    /// Rollouts per candidate, `P`.
    pub rollouts: usize,
    pub seed: u64,
    pub nonfinite_reward: f64,
}

impl RolloutPlan {
    pub fn new(rollouts: usize, seed: u64) -> Self {
        Self {
            rollouts,
            seed,
            nonfinite_reward: DEFAULT_NONFINITE_REWARD,
        }
    }
}

/// Independent random stream for rollout `index` under `seed`. Streams do
/// not depend on which worker runs the rollout.
pub fn rollout_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Rollout {
    states: Vec<f64>,
    reward: f64,
    flagged: bool,
}

/// Roll out `K` candidates `P` times each from `initial_state`.
pub fn ts1_rollout<M, F>(
    posterior: &EnsemblePosterior<M>,
    initial_state: &[f64],
    actions: &[ActionSequence],
    plan: &RolloutPlan,
    reward: &F,
) -> Result<TrajectoryBatch>
where
    M: DynamicsModel,
    F: RewardFn + ?Sized,
{
    let state_dim = posterior.state_dim();
    check_dim("initial state", state_dim, initial_state.len())?;
    if initial_state.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidValue {
            what: "initial state",
            reason: "non-finite entry".into(),
        });
    }
    if plan.rollouts == 0 || actions.is_empty() {
        return Err(Error::EmptyBatch {
            candidates: actions.len(),
            rollouts: plan.rollouts,
        });
    }
    let horizon = actions[0].horizon();
    for a in actions {
        check_dim("candidate horizon", horizon, a.horizon())?;
        check_dim("candidate action dim", posterior.action_dim(), a.action_dim())?;
    }

    let k = actions.len();
    let p = plan.rollouts;
    let members = posterior.particles();
    let rollouts: Vec<Rollout> = (0..k * p)
        .into_par_iter()
        .map(|idx| {
            let mut rng = rollout_stream(plan.seed, idx as u64);
            let seq = &actions[idx / p];
            let mut states = Vec::with_capacity((horizon + 1) * state_dim);
            states.extend_from_slice(initial_state);
            let mut total = 0.0;
            let mut flagged = false;
            for t in 0..horizon {
                let s = &states[t * state_dim..(t + 1) * state_dim];
                if flagged {
                    states.extend(std::iter::repeat_n(f64::NAN, state_dim));
                    continue;
                }
                let member = &members[rng.random_range(0..members.len())];
                let a = seq.step(t);
                let next = predict_next(member, s, a, Some(&mut rng));
                if next.iter().all(|x| x.is_finite()) {
                    total += reward.reward(s, a, &next);
                } else {
                    flagged = true;
                }
                states.extend_from_slice(&next);
            }
            if flagged || !total.is_finite() {
                flagged = true;
                total = plan.nonfinite_reward;
            }
            Rollout {
                states,
                reward: total,
                flagged,
            }
        })
        .collect();

    let mut batch = TrajectoryBatch {
        candidates: k,
        rollouts: p,
        horizon,
        state_dim,
        states: Vec::with_capacity(k * p * (horizon + 1) * state_dim),
        rewards: Vec::with_capacity(k * p),
        flagged: Vec::with_capacity(k * p),
    };
    for r in rollouts {
        batch.states.extend(r.states);
        batch.rewards.push(r.reward);
        batch.flagged.push(r.flagged);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{analytic_model, Prediction};

    struct Shift {
        scale: f64,
        noise: f64,
    }

    impl DynamicsModel for Shift {
        fn state_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn predict(&self, s: &[f64], a: &[f64]) -> Prediction {
            Prediction {
                mean: vec![s[0] + self.scale * a[0]],
                variance: vec![self.noise],
            }
        }
    }

    fn neg_abs(_: &[f64], _: &[f64], next: &[f64]) -> f64 {
        -next[0].abs()
    }

    fn seqs(values: &[&[f64]]) -> Vec<ActionSequence> {
        values
            .iter()
            .map(|v| ActionSequence::new(v.len(), 1, v.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn deterministic_single_model_rollouts_agree() {
        let post = EnsemblePosterior::single(Shift { scale: 1.0, noise: 0.0 });
        let batch = ts1_rollout(&post, &[0.5], &seqs(&[&[0.1, -0.3, 0.2]]), &RolloutPlan::new(3, 9), &neg_abs).unwrap();
        assert_eq!(batch.path(0, 0), batch.path(0, 1));
        assert_eq!(batch.path(0, 1), batch.path(0, 2));
        assert_eq!(batch.reward(0, 0), batch.reward(0, 2));
    }

    #[test]
    fn one_step_closed_form() {
        let post = EnsemblePosterior::single(Shift { scale: 1.0, noise: 0.0 });
        let batch = ts1_rollout(&post, &[0.25], &seqs(&[&[-1.0], &[0.5]]), &RolloutPlan::new(2, 0), &neg_abs).unwrap();
        assert_eq!(batch.reward(0, 0), -0.75);
        assert_eq!(batch.reward(1, 1), -0.75);
        assert_eq!(batch.state(1, 0, 1), &[0.75]);
    }

    #[test]
    fn member_index_is_uniform() {
        // member m moves the state by exactly m, so each step reveals its draw
        let post = EnsemblePosterior::new((0..5).map(|m| Shift { scale: m as f64, noise: 0.0 }).collect()).unwrap();
        let actions = seqs(&[&[1.0; 100]]);
        let batch = ts1_rollout(&post, &[0.0], &actions, &RolloutPlan::new(100, 77), &neg_abs).unwrap();
        let mut counts = [0usize; 5];
        for i in 0..100 {
            for t in 0..100 {
                let step = batch.state(0, i, t + 1)[0] - batch.state(0, i, t)[0];
                counts[step.round() as usize] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.2).abs() <= 0.01, "frequency {f}");
        }
    }

    #[test]
    fn reward_equals_rewalk_of_states() {
        let model = analytic_model("pendulum").unwrap();
        let post = EnsemblePosterior::single(model.clone());
        let actions = seqs(&[&[0.5, -1.0, 2.0, 0.0], &[-2.0, -2.0, 1.0, 1.0]]);
        let reward = |s: &[f64], a: &[f64], n: &[f64]| {
            use crate::envs::Task;
            model.0.reward(s, a, n)
        };
        let s0 = crate::envs::PendulumTask::encode(2.5, 0.3);
        let batch = ts1_rollout(&post, &s0, &actions, &RolloutPlan::new(2, 4), &reward).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                let mut total = 0.0;
                for t in 0..4 {
                    total += reward(batch.state(k, i, t), actions[k].step(t), batch.state(k, i, t + 1));
                }
                assert_eq!(total, batch.reward(k, i));
            }
        }
    }

    #[test]
    fn nonfinite_rollout_gets_floor() {
        let post = EnsemblePosterior::single(Shift { scale: 1e308, noise: 0.0 });
        let mut plan = RolloutPlan::new(2, 0);
        plan.nonfinite_reward = -123.0;
        let batch = ts1_rollout(&post, &[0.0], &seqs(&[&[10.0, 10.0], &[0.0, 0.0]]), &plan, &neg_abs).unwrap();
        assert_eq!(batch.candidate_rewards(0), &[-123.0, -123.0]);
        assert!(batch.is_flagged(0, 0));
        assert!(!batch.is_flagged(1, 0));
        assert_eq!(batch.reward(1, 0), 0.0);
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let post = EnsemblePosterior::new(vec![
            Shift { scale: 1.0, noise: 0.1 },
            Shift { scale: 0.5, noise: 0.3 },
        ])
        .unwrap();
        let actions = seqs(&[&[0.1, 0.2, 0.3], &[-0.3, 0.0, 0.9], &[1.0, 1.0, -1.0]]);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ts1_rollout(&post, &[0.0], &actions, &RolloutPlan::new(8, 42), &neg_abs).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.rewards(), four.rewards());
        assert_eq!(
            one.states.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            four.states.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn empty_inputs_rejected() {
        let post = EnsemblePosterior::single(Shift { scale: 1.0, noise: 0.0 });
        assert!(matches!(
            ts1_rollout(&post, &[0.0], &[], &RolloutPlan::new(2, 0), &neg_abs),
            Err(Error::EmptyBatch { .. })
        ));
        assert!(ts1_rollout(&post, &[0.0, 1.0], &seqs(&[&[1.0]]), &RolloutPlan::new(1, 0), &neg_abs).is_err());
    }
}
