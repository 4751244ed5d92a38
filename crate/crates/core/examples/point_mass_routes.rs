//! Closed-loop mixture planning on the obstacle course with the true
//! dynamics. At every step the active components are rolled out from the
//! current state; the printout shows when they disagree about which side of
//! the middle obstacle to take.
//!
//!     cargo run --release --example point_mass_routes -- [seed]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vimpc::experiment::{component_paths, max_route_separation};
use vimpc::prelude::*;

fn main() -> vimpc::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let task = PointMassTask::default();
    let model = EnsemblePosterior::single(GroundTruth(task.clone()));
    let cfg = PlannerConfig {
        optimality: OptimalityConfig::cem(0.1).with_entropy(0.5),
        components: 5,
        samples: 500,
        rollouts: 1,
        iterations: 3,
        horizon: 30,
        init_variance: 0.0025,
        ..PlannerConfig::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log = mpc_episode(&task, &model, &cfg, 40, true, &mut rng)?;

    println!("step      x      y  active  separation");
    for (t, (phi, s)) in log.plans.iter().zip(&log.states).enumerate() {
        let paths = component_paths(&task, s, phi);
        let active = phi.mixture().iter().filter(|p| **p > 0.1).count();
        let sep = max_route_separation(&paths, phi.mixture(), 0.1);
        // where each active route passes the obstacle column at x = 0.5
        let sides: Vec<&str> = (0..phi.components())
            .filter(|&m| phi.mixture()[m] > 0.1)
            .map(|m| {
                let p = paths[m].iter().min_by(|a, b| (a[0] - 0.5).abs().total_cmp(&(b[0] - 0.5).abs())).unwrap();
                if p[1] >= 0.0 { "above" } else { "below" }
            })
            .collect();
        println!("{t:>4} {:>6.3} {:>6.3} {active:>7} {sep:>11.3}  {}", s[0], s[1], sides.join(" "));
    }
    let end = log.states.last().unwrap();
    println!(
        "final state ({:.3}, {:.3}), distance to goal {:.3}, return {:.2}",
        end[0],
        end[1],
        (end[0] - task.goal[0]).hypot(end[1] - task.goal[1]),
        log.total_reward
    );
    Ok(())
}
