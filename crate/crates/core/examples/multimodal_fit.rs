//! Fit a two-component mixture to a two-bump objective over a 2-D action,
//! treating the objective as a one-step deterministic task. Prints the
//! component means and weights after every iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vimpc::prelude::*;

fn main() -> vimpc::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let objective = MultimodalObjective::default();
    let spec = objective.spec();
    let model = EnsemblePosterior::single(GroundTruth(objective.clone()));
    let cfg = PlannerConfig {
        optimality: OptimalityConfig::mppi(0.25).with_entropy(3.0),
        components: 2,
        samples: 500,
        rollouts: 1,
        iterations: 20,
        horizon: 1,
        init_variance: 0.25,
        ..PlannerConfig::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = init_gmm(cfg.components, cfg.horizon, spec.action_dim, cfg.init_variance, &mut rng)?;
    let reward = |s: &[f64], a: &[f64], n: &[f64]| objective.reward(s, a, n);
    let out = plan(&objective.initial_state(), &init, &model, &cfg, &spec.bounds, &reward, &mut rng)?;

    for (j, phi) in out.snapshots.iter().enumerate() {
        let comps: Vec<String> = (0..phi.components())
            .map(|m| {
                let mu = phi.mean(m);
                format!("pi={:.2} mu=({:+.3}, {:+.3})", phi.mixture()[m], mu[0], mu[1])
            })
            .collect();
        println!("iter {j:>2}: {}", comps.join("   "));
    }
    println!("modes at {:?}", objective.centers());
    Ok(())
}
