use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::TransitionDataset;
use super::mlp::{Activation, Adam, MlpModel};
use super::EnsemblePosterior;
use crate::error::{Error, Result};

/// Hyperparameters for training the dynamics ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Number of networks `E`.
    pub members: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// L2 penalty on weight matrices (the Gaussian prior on parameters).
    pub weight_decay: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![64, 64],
            activation: Activation::Swish,
            epochs: 50,
            batch_size: 160,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::invalid_config("members", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_config("batch_size", "must be >= 1"));
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return Err(Error::invalid_config("hidden", "layer widths must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid_config("learning_rate", "must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid_config("weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

/// Per-member, per-epoch NLL on the full (normalized) training set,
/// recorded after each epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_nll: Vec<Vec<f64>>,
}

/// Train `E` networks independently: distinct initializations and distinct
/// minibatch orders, no bootstrap resampling.
pub fn train_ensemble(
    data: &TransitionDataset,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<(EnsemblePosterior<MlpModel>, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData);
    }
    let normalizer = data.normalizer()?;
    let inputs: Vec<Vec<f64>> = (0..data.len())
        .map(|i| normalizer.normalize_input(&data.input(i)))
        .collect();
    let targets: Vec<Vec<f64>> = (0..data.len())
        .map(|i| normalizer.normalize_target(&data.delta(i)))
        .collect();

    let trained: Vec<(MlpModel, Vec<f64>)> = (0..cfg.members)
        .into_par_iter()
        .map(|member| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(member as u64);
            let mut model = MlpModel::random(
                data.state_dim(),
                data.action_dim(),
                &cfg.hidden,
                cfg.activation,
                &mut rng,
            );
            model
                .set_normalizer(normalizer.clone())
                .expect("normalizer built from the same dataset");
            let curve = fit_member(&mut model, &inputs, &targets, cfg, &mut rng);
            (model, curve)
        })
        .collect();

    let (models, epoch_nll): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok((EnsemblePosterior::new(models)?, TrainReport { epoch_nll }))
}

fn fit_member(
    model: &mut MlpModel,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &EnsembleConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut opt = Adam::new(model.param_count(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut params = model.params().to_vec();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<Vec<f64>> = batch.iter().map(|&i| inputs[i].clone()).collect();
            let ys: Vec<Vec<f64>> = batch.iter().map(|&i| targets[i].clone()).collect();
            let (_, grad) = model.loss_and_grad(&xs, &ys, cfg.weight_decay);
            opt.step(&mut params, &grad);
            model.set_params(params.clone()).expect("same layout");
        }
        curve.push(normalized_nll(model, inputs, targets));
    }
    curve
}

/// Mean normalized-space NLL (no constant, no decay) over a set of samples.
pub(crate) fn normalized_nll(model: &MlpModel, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let total: f64 = inputs
        .iter()
        .zip(targets)
        .map(|(x, y)| {
            let (mu, lv) = model.forward_normalized(x);
            mu.iter()
                .zip(&lv)
                .zip(y)
                .map(|((m, l), y)| 0.5 * ((y - m).powi(2) * (-l).exp() + l))
                .sum::<f64>()
        })
        .sum();
    total / inputs.len() as f64
}

/// Mean raw-space one-step NLL of a dataset, averaged over ensemble members.
pub fn ensemble_nll(posterior: &EnsemblePosterior<MlpModel>, data: &TransitionDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData);
    }
    let n = data.len() as f64;
    let per_member: Vec<f64> = posterior
        .particles()
        .iter()
        .map(|m| {
            (0..data.len())
                .map(|i| m.transition_nll(data.state(i), data.action(i), data.next_state(i)))
                .sum::<f64>()
                / n
        })
        .collect();
    Ok(per_member.iter().sum::<f64>() / per_member.len() as f64)
}
