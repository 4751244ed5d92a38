//! Drive a small sweep from a TOML string, the same way the `vimpc` binary
//! drives it from a file, and print the summary and where the CSVs went.

use vimpc::experiment::{parse_config_str, run_experiment, ExperimentSpec};

const CONFIG: &str = r#"
mode = "sweep"
seeds = [0, 1, 2]

[optimizer]
optimality = "MPPI"
dist = "GMM(M=2)"
max_ent = false
lambda = 0.25

[planner]
samples = 300
rollouts = 1
iterations = 15
horizon = 1
init_variance = 0.25

[env]
task = "multimodal"

[sweep]
base = "fit_objective"
components = [1, 2]
kappa = [0.0, 1.0, 3.0]
"#;

fn main() -> vimpc::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/config_experiment".into());
    let spec = ExperimentSpec::new(parse_config_str(CONFIG)?, None, None, &out)?;
    let report = run_experiment(&spec)?;
    for (name, mean, ci, n) in &report.summary {
        println!("{name:>20} {mean:>9.4} +/- {ci:.4} (n={n})");
    }
    println!("\nmax_mode_error per cell:");
    for m in [1, 2] {
        for k in [0.0, 1.0, 3.0] {
            let v = report.seed_values("max_mode_error", Some((m, k)));
            println!("  M={m} kappa={k}: {v:.3?}");
        }
    }
    println!("artifacts in {out}: sweep.csv, sweep_grid.csv, run_manifest.json, m*_kappa*/");
    Ok(())
}
