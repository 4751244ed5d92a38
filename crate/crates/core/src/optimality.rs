//! Optimality likelihoods `f(r)` that turn per-candidate rewards into
//! unnormalized particle weights.
//!
//! Every transform consumes one reward per candidate. By default that reward
//! is the rollout mean (`W' = f(mean r)`), which penalizes candidates whose
//! rollouts disagree; [`Estimator::TransformThenMean`] gives the
//! `W = mean f(r)` alternative.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{OptimalityConfig, OptimalityKind, TrajectoryBatch};

/// How rollout rewards are pooled before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `f` applied to the mean rollout reward of each candidate.
    #[default]
    MeanThenTransform,
    /// `f` applied to every rollout, then averaged per candidate.
    TransformThenMean,
}

/// Mean reward over the `P` rollouts of each candidate.
pub fn estimate_w_prime(batch: &TrajectoryBatch) -> Result<Vec<f64>> {
    check_nonempty(batch)?;
    let p = batch.rollouts() as f64;
    Ok((0..batch.candidates())
        .map(|k| batch.candidate_rewards(k).iter().sum::<f64>() / p)
        .collect())
}

/// Apply `f` to every rollout reward and average per candidate.
pub fn estimate_w<F>(batch: &TrajectoryBatch, f: F) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64,
{
    check_nonempty(batch)?;
    let p = batch.rollouts() as f64;
    Ok((0..batch.candidates())
        .map(|k| batch.candidate_rewards(k).iter().map(|r| f(*r)).sum::<f64>() / p)
        .collect())
}

fn check_nonempty(batch: &TrajectoryBatch) -> Result<()> {
    if batch.candidates() == 0 || batch.rollouts() == 0 {
        return Err(Error::EmptyBatch {
            candidates: batch.candidates(),
            rollouts: batch.rollouts(),
        });
    }
    Ok(())
}

/// Number of elites `max(1, floor(e * K))`, capped at `K`.
pub fn elite_count(k: usize, elite_fraction: f64) -> usize {
    ((elite_fraction * k as f64).floor() as usize).clamp(1, k.max(1))
}

/// Candidate indices ordered from best to worst reward. Equal rewards keep
/// ascending index order.
pub fn rank_descending(r: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].partial_cmp(&r[a]).unwrap_or(Ordering::Equal));
    order
}

/// Elite indicator: 1 on the `N_e` best candidates, 0 elsewhere.
pub fn transform_cem(r: &[f64], elite_fraction: f64) -> Vec<f64> {
    let mut w = vec![0.0; r.len()];
    if r.is_empty() {
        return w;
    }
    let n_elite = elite_count(r.len(), elite_fraction);
    for &k in rank_descending(r).iter().take(n_elite) {
        w[k] = 1.0;
    }
    w
}

/// Exponential weights on min-max normalized rewards,
/// `exp((r - r_min) / (lambda * (r_max - r_min)))`.
pub fn transform_mppi(r: &[f64], lambda: f64) -> Vec<f64> {
    min_max_normalize(r)
        .into_iter()
        .map(|x| (x / lambda).exp())
        .collect()
}

/// Linear min-max rescaling of rewards onto `[0, 1]`. A flat batch gets
/// uniform `1/K` weights.
pub fn transform_prop_cem(r: &[f64]) -> Vec<f64> {
    match range(r) {
        Some((lo, hi)) if hi > lo => r.iter().map(|x| (x - lo) / (hi - lo)).collect(),
        _ => vec![1.0 / r.len().max(1) as f64; r.len()],
    }
}

/// Rank weights on the elite set: the `i`-th best elite (1-based) gets
/// `ln(1 + N_e + 1 - i)`, non-elites get 0.
pub fn transform_cmaes(r: &[f64], elite_fraction: f64) -> Vec<f64> {
    let mut w = vec![0.0; r.len()];
    if r.is_empty() {
        return w;
    }
    let n_elite = elite_count(r.len(), elite_fraction);
    for (i, &k) in rank_descending(r).iter().take(n_elite).enumerate() {
        w[k] = ((n_elite - i) as f64).ln_1p();
    }
    w
}

/// Plain exponential likelihood `exp(r / lambda)` without batch normalization.
pub fn exp_likelihood(r: f64, lambda: f64) -> f64 {
    (r / lambda).exp()
}

/// Dispatch to the transform named by `cfg.kind`.
pub fn apply_transform(cfg: &OptimalityConfig, r: &[f64]) -> Vec<f64> {
    match cfg.kind {
        OptimalityKind::Cem => transform_cem(r, cfg.elite_fraction),
        OptimalityKind::Mppi => transform_mppi(r, cfg.lambda),
        OptimalityKind::PropCem => transform_prop_cem(r),
        OptimalityKind::Cmaes => transform_cmaes(r, cfg.elite_fraction),
    }
}

/// Per-candidate likelihoods for a batch under the chosen estimator.
///
/// With [`Estimator::TransformThenMean`] the transform sees all `K * P`
/// rollout rewards at once (so batch statistics and elite sets span every
/// rollout) and the result is averaged per candidate.
pub fn candidate_likelihoods(
    cfg: &OptimalityConfig,
    batch: &TrajectoryBatch,
    estimator: Estimator,
) -> Result<Vec<f64>> {
    match estimator {
        Estimator::MeanThenTransform => Ok(apply_transform(cfg, &estimate_w_prime(batch)?)),
        Estimator::TransformThenMean => {
            check_nonempty(batch)?;
            let per_rollout = apply_transform(cfg, batch.rewards());
            let p = batch.rollouts();
            Ok(per_rollout
                .chunks(p)
                .map(|c| c.iter().sum::<f64>() / p as f64)
                .collect())
        }
    }
}

fn range(r: &[f64]) -> Option<(f64, f64)> {
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (!r.is_empty()).then_some((lo, hi))
}

/// `(x - min) / (max - min)`; all zeros when the range is degenerate.
pub(crate) fn min_max_normalize(r: &[f64]) -> Vec<f64> {
    match range(r) {
        Some((lo, hi)) if hi > lo => r.iter().map(|x| (x - lo) / (hi - lo)).collect(),
        _ => vec![0.0; r.len()],
    }
}
