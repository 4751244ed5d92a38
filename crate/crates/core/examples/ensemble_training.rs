//! Train a small probabilistic ensemble on random-controller pendulum data
//! and compare its one-step predictions with the true dynamics on held-out
//! transitions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vimpc::dynamics::ensemble_nll;
use vimpc::prelude::*;

fn main() -> vimpc::Result<()> {
    let task = PendulumTask::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut train = TransitionDataset::new(3, 1);
    for _ in 0..5 {
        train.extend(&seed_dataset(&task, 200, &mut rng)?)?;
    }
    let held_out = seed_dataset(&task, 200, &mut rng)?;

    let cfg = EnsembleConfig {
        members: 5,
        hidden: vec![32, 32],
        epochs: 40,
        batch_size: 32,
        ..EnsembleConfig::default()
    };
    let (ensemble, report) = train_ensemble(&train, &cfg, 1)?;
    for (member, curve) in report.epoch_nll.iter().enumerate() {
        println!(
            "member {member}: training NLL {:.3} -> {:.3}",
            curve.first().unwrap(),
            curve.last().unwrap()
        );
    }
    println!("held-out one-step NLL {:.3}", ensemble_nll(&ensemble, &held_out)?);

    let mut worst: f64 = 0.0;
    let mut spread = 0.0;
    for i in 0..held_out.len() {
        let (s, a) = (held_out.state(i), held_out.action(i));
        let means: Vec<Vec<f64>> = ensemble.particles().iter().map(|m| m.predict(s, a).mean).collect();
        for (j, truth) in held_out.next_state(i).iter().enumerate() {
            let avg = means.iter().map(|p| p[j]).sum::<f64>() / means.len() as f64;
            worst = worst.max((avg - truth).abs());
            spread += means.iter().map(|p| (p[j] - avg).powi(2)).sum::<f64>() / means.len() as f64;
        }
    }
    println!("worst ensemble-mean error {worst:.4}");
    println!("mean disagreement variance {:.2e}", spread / (3 * held_out.len()) as f64);
    Ok(())
}
