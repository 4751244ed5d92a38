//! The single-Gaussian CEM planner and the five-component mixture planner
//! with entropy bonus, both written as `(optimality, components, max_ent)`
//! settings of the same planner, planning once from the start of the
//! obstacle course over several seeds.

use vimpc::envs::Env;
use vimpc::experiment::{component_paths, max_route_separation, open_loop_return, plan_with_true_dynamics};
use vimpc::prelude::*;

fn main() -> vimpc::Result<()> {
    let env = Env::PointMass(PointMassTask::default());
    let base = PlannerConfig {
        samples: 500,
        rollouts: 1,
        iterations: 3,
        horizon: 30,
        init_variance: 0.0025,
        ..PlannerConfig::default()
    };
    let variants = [
        ("CEM, M=1, no entropy", PlannerConfig { optimality: OptimalityConfig::cem(0.1), components: 1, ..base.clone() }),
        (
            "CEM, M=5, kappa=0.5",
            PlannerConfig { optimality: OptimalityConfig::cem(0.1).with_entropy(0.5), components: 5, ..base.clone() },
        ),
    ];
    for (name, cfg) in &variants {
        println!("{name}");
        for seed in 0..5 {
            let out = plan_with_true_dynamics(&env, cfg, seed)?;
            let phi = &out.params;
            let paths = component_paths(&env, &env.initial_state(), phi);
            println!(
                "  seed {seed}: best {:>7.2}  dominant return {:>7.2}  active {}  route separation {:.3}",
                out.diagnostics.last().unwrap().best_reward,
                open_loop_return(&env, phi, phi.dominant_component()),
                phi.mixture().iter().filter(|p| **p > 0.1).count(),
                max_route_separation(&paths, phi.mixture(), 0.1)
            );
        }
    }
    Ok(())
}
