//! Model-based RL on pendulum swing-up: seed the dataset with a random
//! episode, then alternate ensemble training and one MPC episode planned
//! through the ensemble. Takes a few minutes in release mode.

use rand::SeedableRng;
use vimpc::mbrl::{run_mbrl_with, MbrlOptions};
use vimpc::prelude::*;

fn main() -> vimpc::Result<()> {
    let task = PendulumTask::default();
    let cfg = MbrlConfig {
        episodes: 10,
        episode_length: 100,
        planner: PlannerConfig {
            optimality: OptimalityConfig::cem(0.1).with_entropy(0.5),
            components: 3,
            samples: 100,
            rollouts: 4,
            iterations: 3,
            horizon: 15,
            init_variance: 1.0,
            ..PlannerConfig::default()
        },
        ensemble: EnsembleConfig {
            members: 5,
            hidden: vec![32, 32],
            epochs: 30,
            batch_size: 32,
            ..EnsembleConfig::default()
        },
        seed: 0,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let opts = MbrlOptions {
        validation: Some(seed_dataset(&task, 200, &mut rng)?),
        checkpoint_dir: None,
    };
    let out = run_mbrl_with(&task, &cfg, &opts)?;
    println!("episode  reward   |D|   ESS  val NLL");
    for r in &out.curve {
        println!(
            "{:>7} {:>7.1} {:>5} {:>5.1} {:>8.3}",
            r.episode,
            r.total_reward,
            r.dataset_size,
            r.plan_ess_mean,
            r.validation_nll.unwrap_or(f64::NAN)
        );
    }
    if let Some(nll) = out.final_validation_nll {
        println!("final ensemble validation NLL {nll:.3}");
    }
    Ok(())
}
