//! Model-based RL outer loop: seed the dataset with a random controller,
//! then alternate ensemble training with one MPC episode at a time.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    ensemble_nll, DynamicsModel, train_ensemble, EnsembleCheckpoint, EnsembleConfig, EnsemblePosterior, MlpModel,
    TransitionDataset,
};
use crate::envs::Task;
use crate::error::{Error, Result};
use crate::planner::{init_gmm, plan, select_action, warm_start_shift, PlannerConfig};
use crate::posterior::GmmParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbrlConfig {
    pub episodes: usize,
    /// Steps per episode `H`; also the length of the random seed episode.
    pub episode_length: usize,
    pub planner: PlannerConfig,
    pub ensemble: EnsembleConfig,
    pub seed: u64,
}

impl MbrlConfig {
    pub fn validate<T: Task + ?Sized>(&self, task: &T) -> Result<()> {
        if self.episode_length == 0 {
            return Err(Error::invalid_config("episode_length", "must be >= 1"));
        }
        self.planner.validate(&task.spec())?;
        self.ensemble.validate()
    }
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based episode number.
    pub episode: usize,
    pub total_reward: f64,
    /// Transitions in `D` after the episode.
    pub dataset_size: usize,
    /// Average effective sample size over every planner iteration of the episode.
    pub plan_ess_mean: f64,
    pub failed_plans: usize,
    /// One-step NLL of the episode's ensemble on the validation set, if any.
    pub validation_nll: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MbrlOutcome {
    pub curve: Vec<EpisodeRecord>,
    /// Ensemble retrained on the final dataset.
    pub posterior: EnsemblePosterior<MlpModel>,
    pub final_validation_nll: Option<f64>,
    pub dataset: TransitionDataset,
}

#[derive(Debug, Clone, Default)]
pub struct MbrlOptions {
    /// Held-out transitions for tracking one-step model quality.
    pub validation: Option<TransitionDataset>,
    /// Write `checkpoint.json` here after every episode.
    pub checkpoint_dir: Option<PathBuf>,
}

const MBRL_CHECKPOINT_FORMAT: &str = "vimpc-mbrl";
const MBRL_CHECKPOINT_VERSION: u32 = 1;

/// Resumable state of an MBRL run after a completed episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MbrlCheckpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub completed_episodes: usize,
    pub curve: Vec<EpisodeRecord>,
    pub dataset: TransitionDataset,
    pub ensemble: EnsembleCheckpoint,
}

impl MbrlCheckpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ckpt.format != MBRL_CHECKPOINT_FORMAT || ckpt.version != MBRL_CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported {} v{}", ckpt.format, ckpt.version)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Random stream for episode `episode` (0 is the seed episode). Deriving
/// streams from the episode index keeps resumed runs identical to
/// uninterrupted ones.
fn episode_stream(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

/// One episode of uniformly random actions within the task bounds.
pub fn seed_dataset<T, R>(task: &T, steps: usize, rng: &mut R) -> Result<TransitionDataset>
where
    T: Task + ?Sized,
    R: Rng + ?Sized,
{
    let spec = task.spec();
    let mut data = TransitionDataset::new(spec.state_dim, spec.action_dim);
    let mut s = task.initial_state();
    for _ in 0..steps {
        let a: Vec<f64> = spec
            .bounds
            .low()
            .iter()
            .zip(spec.bounds.high())
            .map(|(l, h)| if l < h { rng.random_range(*l..=*h) } else { *l })
            .collect();
        let next = task.step(&s, &a);
        data.push(&s, &a, &next)?;
        s = next;
    }
    Ok(data)
}

pub fn run_mbrl<T: Task + ?Sized>(task: &T, cfg: &MbrlConfig) -> Result<MbrlOutcome> {
    run_mbrl_with(task, cfg, &MbrlOptions::default())
}

pub fn run_mbrl_with<T: Task + ?Sized>(task: &T, cfg: &MbrlConfig, opts: &MbrlOptions) -> Result<MbrlOutcome> {
    cfg.validate(task)?;
    let dataset = seed_dataset(task, cfg.episode_length, &mut episode_stream(cfg.seed, 0))?;
    continue_mbrl(task, cfg, opts, dataset, Vec::new())
}

/// Continue a run from a checkpoint written by [`run_mbrl_with`].
pub fn resume_mbrl<T: Task + ?Sized>(
    task: &T,
    cfg: &MbrlConfig,
    opts: &MbrlOptions,
    checkpoint: MbrlCheckpoint,
) -> Result<MbrlOutcome> {
    cfg.validate(task)?;
    if checkpoint.seed != cfg.seed {
        return Err(Error::Checkpoint(format!(
            "checkpoint seed {} does not match config seed {}",
            checkpoint.seed, cfg.seed
        )));
    }
    continue_mbrl(task, cfg, opts, checkpoint.dataset, checkpoint.curve)
}

fn continue_mbrl<T: Task + ?Sized>(
    task: &T,
    cfg: &MbrlConfig,
    opts: &MbrlOptions,
    mut dataset: TransitionDataset,
    mut curve: Vec<EpisodeRecord>,
) -> Result<MbrlOutcome> {
    let pc = &cfg.planner;
    for episode in curve.len() + 1..=cfg.episodes {
        let mut rng = episode_stream(cfg.seed, episode);
        let (posterior, _) = train_ensemble(&dataset, &cfg.ensemble, rng.random())?;
        let validation_nll = opts
            .validation
            .as_ref()
            .map(|v| ensemble_nll(&posterior, v))
            .transpose()?;

        let log = mpc_episode(task, &posterior, pc, cfg.episode_length, false, &mut rng)?;
        for (t, a) in log.actions.iter().enumerate() {
            dataset.push(&log.states[t], a, &log.states[t + 1])?;
        }
        curve.push(EpisodeRecord {
            episode,
            total_reward: log.total_reward,
            dataset_size: dataset.len(),
            plan_ess_mean: log.plan_ess_mean,
            failed_plans: log.failed_plans,
            validation_nll,
        });

        if let Some(dir) = &opts.checkpoint_dir {
            fs::create_dir_all(dir)?;
            MbrlCheckpoint {
                format: MBRL_CHECKPOINT_FORMAT.into(),
                version: MBRL_CHECKPOINT_VERSION,
                seed: cfg.seed,
                completed_episodes: episode,
                curve: curve.clone(),
                dataset: dataset.clone(),
                ensemble: EnsembleCheckpoint::new(&posterior),
            }
            .save(&dir.join("checkpoint.json"))?;
        }
    }

    let mut rng = episode_stream(cfg.seed, cfg.episodes + 1);
    let (posterior, _) = train_ensemble(&dataset, &cfg.ensemble, rng.random())?;
    let final_validation_nll = opts
        .validation
        .as_ref()
        .map(|v| ensemble_nll(&posterior, v))
        .transpose()?;
    Ok(MbrlOutcome {
        curve,
        posterior,
        final_validation_nll,
        dataset,
    })
}

/// One closed-loop MPC episode from the task's initial state.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    /// `steps + 1` visited states.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub total_reward: f64,
    /// Average effective sample size over every planner iteration.
    pub plan_ess_mean: f64,
    pub failed_plans: usize,
    /// Optimized mixture at every step, before the warm-start shift. Only
    /// filled with `keep_plans`.
    pub plans: Vec<GmmParams>,
}

/// Run `steps` receding-horizon control steps on `task`, planning through
/// `posterior`. The mixture starts from [`init_gmm`] and is warm-started
/// between steps. A step whose plan fails executes the neutral action.
pub fn mpc_episode<T, M, R>(
    task: &T,
    posterior: &EnsemblePosterior<M>,
    cfg: &PlannerConfig,
    steps: usize,
    keep_plans: bool,
    rng: &mut R,
) -> Result<EpisodeLog>
where
    T: Task + ?Sized,
    M: DynamicsModel,
    R: Rng + ?Sized,
{
    let spec = task.spec();
    let bounds = &spec.bounds;
    let reward = |s: &[f64], a: &[f64], n: &[f64]| task.reward(s, a, n);
    let mut phi = init_gmm(cfg.components, cfg.horizon, spec.action_dim, cfg.init_variance, rng)?;
    let mut s = task.initial_state();
    let mut log = EpisodeLog {
        states: vec![s.clone()],
        actions: Vec::with_capacity(steps),
        total_reward: 0.0,
        plan_ess_mean: 0.0,
        failed_plans: 0,
        plans: Vec::new(),
    };
    let mut ess_sum = 0.0;
    let mut ess_count = 0usize;
    for _ in 0..steps {
        let action = match plan(&s, &phi, posterior, cfg, bounds, &reward, rng) {
            Ok(out) => {
                ess_sum += out.diagnostics.iter().map(|d| d.ess).sum::<f64>();
                ess_count += out.diagnostics.len();
                phi = out.params;
                if keep_plans {
                    log.plans.push(phi.clone());
                }
                select_action(&phi, bounds, cfg.deterministic_execution, rng).first().to_vec()
            }
            Err(Error::PlanFailed) => {
                log.failed_plans += 1;
                if keep_plans {
                    log.plans.push(phi.clone());
                }
                bounds.neutral_action()
            }
            Err(e) => return Err(e),
        };
        let next = task.step(&s, &action);
        log.total_reward += task.reward(&s, &action, &next);
        log.states.push(next.clone());
        log.actions.push(action);
        s = next;
        phi = warm_start_shift(&phi, cfg.init_variance, bounds)?;
    }
    if ess_count > 0 {
        log.plan_ess_mean = ess_sum / ess_count as f64;
    }
    Ok(log)
}

/// Fraction of non-empty cells in a regular histogram over the raw
/// `(s, a)` coordinates. Values outside `ranges` fall into the edge cells.
pub fn cover_ratio(data: &TransitionDataset, ranges: &[(f64, f64)], bins: usize) -> Result<f64> {
    let dims = data.state_dim() + data.action_dim();
    if ranges.len() != dims {
        return Err(Error::DimensionMismatch {
            what: "cover-ratio ranges",
            expected: dims,
            found: ranges.len(),
        });
    }
    if bins == 0 || ranges.iter().any(|(lo, hi)| !(hi > lo)) {
        return Err(Error::InvalidValue {
            what: "cover-ratio grid",
            reason: "need bins >= 1 and hi > lo on every dimension".into(),
        });
    }
    let occupied: HashSet<Vec<usize>> = (0..data.len())
        .map(|i| {
            data.state_action(i)
                .iter()
                .zip(ranges)
                .map(|(x, (lo, hi))| {
                    let f = ((x - lo) / (hi - lo) * bins as f64).floor();
                    f.clamp(0.0, (bins - 1) as f64) as usize
                })
                .collect()
        })
        .collect();
    Ok(occupied.len() as f64 / (bins as f64).powi(dims as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, PointMassTask};
    use crate::types::OptimalityConfig;

    fn tiny_cfg(episodes: usize, h: usize) -> MbrlConfig {
        MbrlConfig {
            episodes,
            episode_length: h,
            planner: PlannerConfig {
                optimality: OptimalityConfig::cem(0.2),
                components: 2,
                samples: 20,
                rollouts: 2,
                iterations: 2,
                horizon: 5,
                init_variance: 0.01,
                ..PlannerConfig::default()
            },
            ensemble: EnsembleConfig {
                members: 2,
                hidden: vec![8],
                epochs: 3,
                batch_size: 16,
                ..EnsembleConfig::default()
            },
            seed: 4,
        }
    }

    #[test]
    fn seed_dataset_contract() {
        let task = PointMassTask::default();
        let spec = task.spec();
        let d = seed_dataset(&task, 10, &mut episode_stream(1, 0)).unwrap();
        assert_eq!(d.len(), 10);
        assert!((0..10).all(|i| spec.bounds.contains(d.action(i))));
        let again = seed_dataset(&task, 10, &mut episode_stream(1, 0)).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn dataset_grows_by_episode_length() {
        let task = Env::by_name("point_mass").unwrap();
        let out = run_mbrl(&task, &tiny_cfg(2, 5)).unwrap();
        assert_eq!(out.dataset.len(), 5 + 2 * 5);
        assert_eq!(out.curve[0].dataset_size, 10);
        assert_eq!(out.curve[1].dataset_size, 15);
        let bounds = task.spec().bounds;
        assert!((0..out.dataset.len()).all(|i| bounds.contains(out.dataset.action(i))));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let task = Env::by_name("point_mass").unwrap();
        let cfg = tiny_cfg(2, 4);
        let full = run_mbrl(&task, &cfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let opts = MbrlOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..MbrlOptions::default()
        };
        run_mbrl_with(&task, &MbrlConfig { episodes: 1, ..cfg.clone() }, &opts).unwrap();
        let ckpt = MbrlCheckpoint::load(&dir.path().join("checkpoint.json")).unwrap();
        assert_eq!(ckpt.completed_episodes, 1);
        let resumed = resume_mbrl(&task, &cfg, &MbrlOptions::default(), ckpt).unwrap();
        assert_eq!(full.curve, resumed.curve);
        assert_eq!(full.dataset, resumed.dataset);
    }

    #[test]
    fn cover_ratio_counts_cells() {
        let mut d = TransitionDataset::new(1, 1);
        d.push(&[0.1], &[0.1], &[0.0]).unwrap();
        d.push(&[0.15], &[0.12], &[0.0]).unwrap();
        d.push(&[0.9], &[0.9], &[0.0]).unwrap();
        d.push(&[5.0], &[-5.0], &[0.0]).unwrap();
        let cr = cover_ratio(&d, &[(0.0, 1.0), (0.0, 1.0)], 2).unwrap();
        // cells (0,0), (1,1), (1,0)
        assert_eq!(cr, 3.0 / 4.0);
        assert!(cover_ratio(&d, &[(0.0, 1.0)], 2).is_err());
    }
}
