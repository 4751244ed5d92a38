use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vimpc::envs::Env;
use vimpc::experiment::plan_with_true_dynamics;
use vimpc::optimality::{estimate_w, estimate_w_prime, exp_likelihood};
use vimpc::posterior::{gmm_fit_weighted, update_particle_weights, WeightedParticles};
use vimpc::prelude::*;
use vimpc::types::{ParticleWeights, TrajectoryBatch};

fn mixture(m: usize, d: usize) -> impl Strategy<Value = GmmParams> {
    (
        prop::collection::vec(0.05f64..1.0, m),
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), m),
        prop::collection::vec(prop::collection::vec(0.01f64..2.0, d), m),
    )
        .prop_map(move |(pi, means, vars)| {
            let z: f64 = pi.iter().sum();
            GmmParams::new(d, 1, pi.iter().map(|p| p / z).collect(), means, vars).unwrap()
        })
}

fn particles(d: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..40).prop_flat_map(move |k| {
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), k),
            prop::collection::vec(0.0f64..1.0, k),
        )
    })
}

fn weighted(xs: &[Vec<f64>], raw: &[f64]) -> Option<WeightedParticles> {
    let w = ParticleWeights::from_unnormalized(raw.to_vec()).ok()?;
    let seqs = xs.iter().map(|x| ActionSequence::new(x.len(), 1, x.clone()).unwrap()).collect();
    WeightedParticles::new(seqs, w).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn particle_weights_on_simplex(
        w in prop::collection::vec(0.0f64..10.0, 1..50),
        lq in prop::collection::vec(-30.0f64..5.0, 50),
        kappa in 0.0f64..5.0,
    ) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let pw = update_particle_weights(&w, &lq[..w.len()], kappa).unwrap();
        prop_assert!((pw.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(pw.as_slice().iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn zero_kappa_ignores_common_scale(
        w in prop::collection::vec(0.01f64..10.0, 1..50),
        scale in 1e-3f64..1e3,
    ) {
        let lq = vec![0.0; w.len()];
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let a = update_particle_weights(&w, &lq, 0.0).unwrap();
        let b = update_particle_weights(&scaled, &lq, 0.0).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn fit_keeps_simplex_and_positive_variance(
        (prev, (xs, raw)) in (1usize..5, 1usize..5).prop_flat_map(|(m, d)| (mixture(m, d), particles(d))),
    ) {
        let Some(p) = weighted(&xs, &raw) else { return Ok(()) };
        let fit = gmm_fit_weighted(&p, &prev, 1e-12).unwrap().params;
        prop_assert!((fit.mixture().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(fit.mixture().iter().all(|x| *x >= 0.0));
        for m in 0..fit.components() {
            prop_assert!(fit.variance(m).iter().all(|v| *v > 0.0 && v.is_finite()));
            prop_assert!(fit.mean(m).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn single_component_fit_is_weighted_moments(
        (prev, (xs, raw)) in (1usize..6).prop_flat_map(|d| (mixture(1, d), particles(d))),
    ) {
        let Some(p) = weighted(&xs, &raw) else { return Ok(()) };
        let fit = gmm_fit_weighted(&p, &prev, 1e-300).unwrap().params;
        let total: f64 = raw.iter().sum();
        for j in 0..prev.dim() {
            let mean: f64 = xs.iter().zip(&raw).map(|(x, w)| w / total * x[j]).sum();
            let var: f64 = xs.iter().zip(&raw).map(|(x, w)| w / total * (x[j] - mean).powi(2)).sum();
            prop_assert!((fit.mean(0)[j] - mean).abs() <= 1e-12);
            prop_assert!((fit.variance(0)[j] - var.max(1e-300)).abs() <= 1e-12);
        }
        prop_assert_eq!(fit.mixture(), &[1.0]);
    }

    #[test]
    fn warm_start_idempotent_on_variance_and_mixture(prev in (1usize..5, 1usize..8).prop_flat_map(|(m, d)| mixture(m, d)), v in 0.01f64..2.0) {
        let bounds = ActionBounds::symmetric(1, 1.0).unwrap();
        let once = warm_start_shift(&prev, v, &bounds).unwrap();
        let twice = warm_start_shift(&once, v, &bounds).unwrap();
        prop_assert_eq!(once.variances(), twice.variances());
        prop_assert_eq!(once.mixture(), twice.mixture());
        let m = prev.components() as f64;
        prop_assert!(once.mixture().iter().all(|p| *p == 1.0 / m));
    }

    #[test]
    fn jensen_ordering_for_exponential(
        rows in (1usize..10, 2usize..8).prop_flat_map(|(k, p)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, p), k)),
        lambda in 0.1f64..3.0,
    ) {
        let batch = TrajectoryBatch::from_rewards(rows.clone()).unwrap();
        let after = estimate_w_prime(&batch).unwrap();
        let before = estimate_w(&batch, |r| exp_likelihood(r, lambda)).unwrap();
        for (k, row) in rows.iter().enumerate() {
            let f_mean = exp_likelihood(after[k], lambda);
            if row.iter().any(|r| (r - row[0]).abs() > 1e-6) {
                prop_assert!(f_mean < before[k]);
            } else {
                prop_assert!(f_mean <= before[k] * (1.0 + 1e-9));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn executed_actions_stay_in_bounds(seed in 0u64..10_000, name in prop::sample::select(vec!["point_mass", "pendulum", "linear_test"])) {
        let env = Env::by_name(name).unwrap();
        let bounds = env.spec().bounds;
        let model = EnsemblePosterior::single(GroundTruth(env.clone()));
        let cfg = PlannerConfig {
            samples: 30,
            rollouts: 1,
            iterations: 2,
            horizon: 5,
            components: 3,
            init_variance: 4.0,
            ..PlannerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let log = mpc_episode(&env, &model, &cfg, 6, false, &mut rng).unwrap();
        prop_assert!(log.actions.iter().all(|a| bounds.contains(a)));
    }
}

#[test]
fn plans_replay_bit_identically() {
    let env = Env::by_name("point_mass").unwrap();
    let cfg = PlannerConfig {
        samples: 100,
        rollouts: 2,
        iterations: 4,
        horizon: 20,
        init_variance: 0.01,
        ..PlannerConfig::default()
    };
    let a = plan_with_true_dynamics(&env, &cfg, 17).unwrap();
    let b = plan_with_true_dynamics(&env, &cfg, 17).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.diagnostics, b.diagnostics);
}

/// With a deterministic model and one rollout per candidate, the best
/// sampled return should rarely drop between iterations. Drops seen here are
/// sampling noise once CEM has contracted around the optimum (median 0.05%
/// relative), and they push the monotone rate below 0.95 for this setup.
#[test]
fn anytime_improvement_holds_for_most_seeds() {
    let env = Env::by_name("linear_test").unwrap();
    let cfg = PlannerConfig {
        optimality: OptimalityConfig::cem(0.1),
        components: 1,
        samples: 200,
        rollouts: 1,
        iterations: 5,
        horizon: 10,
        init_variance: 0.25,
        ..PlannerConfig::default()
    };
    let seeds = 200;
    let monotone = (0..seeds)
        .filter(|&seed| {
            let out = plan_with_true_dynamics(&env, &cfg, seed).unwrap();
            out.diagnostics.windows(2).all(|w| w[1].best_reward >= w[0].best_reward)
        })
        .count();
    let rate = monotone as f64 / seeds as f64;
    assert!(rate >= 0.95, "monotone in {monotone}/{seeds} seeds");
}
