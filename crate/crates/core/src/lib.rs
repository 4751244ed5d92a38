//! Variational-inference model predictive control.
//!
//! Stochastic MPC methods such as CEM and MPPI are treated as iterative
//! updates of a distribution over action sequences. Each iteration samples
//! candidates, rolls them out through an ensemble of learned dynamics models,
//! converts the resulting rewards into particle weights through an
//! *optimality likelihood*, optionally adds an entropy bonus, and refits the
//! distribution. Using a Gaussian mixture as that distribution keeps several
//! distinct plans alive at once.
//!
//! A planner is described by a `VIMPC(optimality, dist, max_ent)` triple:
//!
//! | triple                          | planner                       |
//! |---------------------------------|-------------------------------|
//! | `(CEM, GMM(M=1), false)`        | PETS-style CEM                |
//! | `(MPPI, GMM(M=1), false)`       | MPPI                          |
//! | `(CEM, GMM(M=5), true)`         | mixture planner with entropy  |
//!
//! ```no_run
//! use rand::SeedableRng;
//! use rand_chacha::ChaCha8Rng;
//! use vimpc::prelude::*;
//!
//! let task = PointMassTask::default();
//! let model = EnsemblePosterior::single(GroundTruth(task.clone()));
//! let cfg = PlannerConfig { horizon: 40, ..PlannerConfig::default() };
//! let spec = task.spec();
//! let mut rng = ChaCha8Rng::seed_from_u64(0);
//! let init = init_gmm(cfg.components, cfg.horizon, 2, cfg.init_variance, &mut rng).unwrap();
//! let reward = |s: &[f64], a: &[f64], n: &[f64]| task.reward(s, a, n);
//! let out = plan(&task.initial_state(), &init, &model, &cfg, &spec.bounds, &reward, &mut rng).unwrap();
//! println!("mixture weights {:?}", out.params.mixture());
//! ```
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability, and the `vimpc` binary for config-driven experiments.

pub mod dynamics;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod mbrl;
pub mod optimality;
pub mod planner;
pub mod posterior;
pub mod sampler;
pub mod types;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::dynamics::{
        analytic_model, predict_next, train_ensemble, DynamicsModel, EnsembleConfig, EnsemblePosterior,
        GroundTruth, MlpModel, TransitionDataset,
    };
    pub use crate::envs::{Env, LinearTestTask, MultimodalObjective, PendulumTask, PointMassTask, Task};
    pub use crate::error::{Error, Result};
    pub use crate::mbrl::{cover_ratio, mpc_episode, run_mbrl, seed_dataset, MbrlConfig};
    pub use crate::optimality::Estimator;
    pub use crate::planner::{init_gmm, plan, select_action, warm_start_shift, PlanOutcome, PlannerConfig};
    pub use crate::posterior::GmmParams;
    pub use crate::sampler::{ts1_rollout, RolloutPlan};
    pub use crate::types::{ActionBounds, ActionSequence, OptimalityConfig, OptimalityKind};
}
