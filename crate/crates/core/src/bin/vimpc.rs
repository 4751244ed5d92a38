use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vimpc::experiment::{parse_seed_list, run_experiment, ExperimentSpec, Mode};

#[derive(Parser)]
#[command(name = "vimpc", version, about = "Run VI-MPC planning and model-based RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan once from the task's initial state with its true dynamics
    Plan(RunArgs),
    /// Fit the action mixture to the multimodal objective
    Fit(RunArgs),
    /// Model-based RL: alternate ensemble training and MPC episodes
    Mbrl(RunArgs),
    /// Run a base mode over a grid of component counts and entropy weights
    Sweep(RunArgs),
    /// Replay a run from its run_manifest.json
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated seeds or ranges, e.g. `0-9,42`
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
}

fn init_threads(n: Option<usize>) -> Result<(), String> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn build(mode: Mode, args: RunArgs) -> Result<ExperimentSpec, String> {
    init_threads(args.threads)?;
    let seeds = args.seeds.as_deref().map(parse_seed_list).transpose().map_err(|e| e.to_string())?;
    ExperimentSpec::from_file(&args.config, Some(mode), seeds, args.out)
        .map_err(|e| format!("{}: {e}", args.config.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let spec = match cli.command {
        Command::Plan(a) => build(Mode::PlanOnce, a),
        Command::Fit(a) => build(Mode::FitObjective, a),
        Command::Mbrl(a) => build(Mode::Mbrl, a),
        Command::Sweep(a) => build(Mode::Sweep, a),
        Command::Replay { manifest, out, threads } => init_threads(threads)
            .and_then(|_| ExperimentSpec::from_manifest(&manifest, out).map_err(|e| e.to_string())),
    };
    let spec = match spec {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    eprintln!("{} run, seeds {:?}, writing to {}", spec.mode, spec.seeds, spec.out_dir.display());
    match run_experiment(&spec) {
        Ok(report) => {
            for (name, mean, ci, n) in &report.summary {
                println!("{name:>24}  {mean:>12.4} +/- {ci:.4}  (n={n})");
            }
            for f in &report.failures {
                eprintln!("seed {} failed: {}", f.seed, f.message);
            }
            if report.succeeded() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
