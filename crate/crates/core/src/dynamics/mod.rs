//! Dynamics models and the ensemble posterior over them.

mod checkpoint;
mod dataset;
mod mlp;
mod train;

pub use checkpoint::{load_ensemble, save_ensemble, EnsembleCheckpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use dataset::{Normalizer, TransitionDataset, STD_FLOOR};
pub use mlp::{Activation, MlpModel, LOG_VAR_MAX, LOG_VAR_MIN};
pub use train::{ensemble_nll, train_ensemble, EnsembleConfig, TrainReport};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::envs::{Env, Task};
use crate::error::{Error, Result};

/// Gaussian one-step prediction of the next state.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// A forward model `p(s' | s, a)` with diagonal Gaussian output.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn predict(&self, state: &[f64], action: &[f64]) -> Prediction;
}

impl<M: DynamicsModel + ?Sized> DynamicsModel for Box<M> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }

    fn predict(&self, state: &[f64], action: &[f64]) -> Prediction {
        (**self).predict(state, action)
    }
}

/// Sample `s'` from the model's predictive Gaussian. With `rng = None` the
/// predictive mean is returned.
pub fn predict_next<M, R>(model: &M, state: &[f64], action: &[f64], rng: Option<&mut R>) -> Vec<f64>
where
    M: DynamicsModel + ?Sized,
    R: Rng + ?Sized,
{
    let Prediction { mut mean, variance } = model.predict(state, action);
    if let Some(rng) = rng {
        for (m, v) in mean.iter_mut().zip(&variance) {
            if *v > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                *m += v.sqrt() * z;
            }
        }
    }
    mean
}

/// Exact, noise-free model backed by a task's own transition function.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T>(pub T);

impl<T: Task> DynamicsModel for GroundTruth<T> {
    fn state_dim(&self) -> usize {
        self.0.spec().state_dim
    }

    fn action_dim(&self) -> usize {
        self.0.spec().action_dim
    }

    fn predict(&self, state: &[f64], action: &[f64]) -> Prediction {
        let mean = self.0.step(state, action);
        let variance = vec![0.0; mean.len()];
        Prediction { mean, variance }
    }
}

/// Ground-truth model for a built-in task: `point_mass`, `pendulum`,
/// `linear_test` or `multimodal`.
pub fn analytic_model(kind: &str) -> Result<GroundTruth<Env>> {
    Env::by_name(kind).map(GroundTruth)
}

/// Equally weighted set of model particles approximating `p_D(theta)`.
#[derive(Debug, Clone)]
pub struct EnsemblePosterior<M> {
    particles: Vec<M>,
}

impl<M: DynamicsModel> EnsemblePosterior<M> {
    pub fn new(particles: Vec<M>) -> Result<Self> {
        let first = particles.first().ok_or(Error::InvalidValue {
            what: "ensemble",
            reason: "at least one particle required".into(),
        })?;
        let (ds, da) = (first.state_dim(), first.action_dim());
        if particles.iter().any(|p| p.state_dim() != ds || p.action_dim() != da) {
            return Err(Error::InvalidValue {
                what: "ensemble",
                reason: "particles disagree on input/output dimensions".into(),
            });
        }
        Ok(Self { particles })
    }

    /// A single deterministic particle.
    pub fn single(model: M) -> Self {
        Self { particles: vec![model] }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[M] {
        &self.particles
    }

    pub fn into_particles(self) -> Vec<M> {
        self.particles
    }

    pub fn state_dim(&self) -> usize {
        self.particles[0].state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.particles[0].action_dim()
    }
}
