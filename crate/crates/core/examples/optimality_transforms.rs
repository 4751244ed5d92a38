//! How each optimality likelihood turns one batch of rewards into particle
//! weights, and what the entropy bonus adds on top.

use vimpc::optimality::{apply_transform, elite_count};
use vimpc::posterior::{entropy_bonus, update_particle_weights};
use vimpc::prelude::*;

fn main() -> vimpc::Result<()> {
    let rewards = [-4.0, -1.5, -1.0, -3.0, -0.2, -2.5, -0.9, -6.0, -1.1, -0.4];
    let configs = [
        OptimalityConfig::cem(0.3),
        OptimalityConfig::mppi(0.5),
        OptimalityConfig::new(OptimalityKind::PropCem),
        OptimalityConfig { elite_fraction: 0.3, ..OptimalityConfig::new(OptimalityKind::Cmaes) },
    ];

    println!("rewards  {}", row(&rewards));
    println!("elites at e=0.3: {}", elite_count(rewards.len(), 0.3));
    for cfg in &configs {
        let w = apply_transform(cfg, &rewards);
        let total: f64 = w.iter().sum();
        let normalized: Vec<f64> = w.iter().map(|x| x / total).collect();
        println!("{:<8} {}", cfg.kind.to_string(), row(&normalized));
    }

    // Samples 2 and 7 sit in low-density regions of q, so the bonus lifts them.
    let log_q = [-1.0, -1.2, -6.0, -0.8, -1.1, -0.9, -1.3, -5.5, -1.0, -0.7];
    println!("\nlog q    {}", row(&log_q));
    for kappa in [0.0, 0.5, 2.0] {
        println!("bonus k={kappa:<3} {}", row(&entropy_bonus(&log_q, kappa)));
    }
    let cem = apply_transform(&configs[0], &rewards);
    let plain = update_particle_weights(&cem, &log_q, 0.0)?;
    let regularized = update_particle_weights(&cem, &log_q, 2.0)?;
    println!("\nCEM weights            {}", row(plain.as_slice()));
    println!("CEM weights, kappa=2   {}", row(regularized.as_slice()));
    println!(
        "effective sample size {:.2} -> {:.2}",
        plain.effective_sample_size(),
        regularized.effective_sample_size()
    );
    Ok(())
}

fn row(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:>6.3}")).collect::<Vec<_>>().join(" ")
}
