use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Lower bound on every normalization standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Observed transitions `(s, a, s')`, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDataset {
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    next_states: Vec<f64>,
}

impl TransitionDataset {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            next_states: Vec::new(),
        }
    }

    pub fn push(&mut self, state: &[f64], action: &[f64], next: &[f64]) -> Result<()> {
        check_dim("transition state", self.state_dim, state.len())?;
        check_dim("transition action", self.action_dim, action.len())?;
        check_dim("transition next state", self.state_dim, next.len())?;
        if state.iter().chain(action).chain(next).any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue {
                what: "transition",
                reason: "non-finite entry".into(),
            });
        }
        self.states.extend_from_slice(state);
        self.actions.extend_from_slice(action);
        self.next_states.extend_from_slice(next);
        Ok(())
    }

    pub fn extend(&mut self, other: &TransitionDataset) -> Result<()> {
        check_dim("dataset state dim", self.state_dim, other.state_dim)?;
        check_dim("dataset action dim", self.action_dim, other.action_dim)?;
        self.states.extend_from_slice(&other.states);
        self.actions.extend_from_slice(&other.actions);
        self.next_states.extend_from_slice(&other.next_states);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.actions.len() / self.action_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        &self.next_states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    /// Concatenated `(s, a)` model input of record `i`.
    pub fn input(&self, i: usize) -> Vec<f64> {
        let mut x = self.state(i).to_vec();
        x.extend_from_slice(self.action(i));
        x
    }

    /// State delta `s' - s` of record `i`.
    pub fn delta(&self, i: usize) -> Vec<f64> {
        self.next_state(i)
            .iter()
            .zip(self.state(i))
            .map(|(n, s)| n - s)
            .collect()
    }

    /// Concatenated `(s, a)` record `i`, the raw space used for occupancy
    /// histograms.
    pub fn state_action(&self, i: usize) -> Vec<f64> {
        self.input(i)
    }

    pub fn normalizer(&self) -> Result<Normalizer> {
        if self.is_empty() {
            return Err(Error::InsufficientData);
        }
        let n = self.len();
        let inputs: Vec<Vec<f64>> = (0..n).map(|i| self.input(i)).collect();
        let targets: Vec<Vec<f64>> = (0..n).map(|i| self.delta(i)).collect();
        let (input_mean, input_std) = column_stats(&inputs);
        let (target_mean, target_std) = column_stats(&targets);
        Ok(Normalizer {
            input_mean,
            input_std,
            target_mean,
            target_std,
        })
    }
}

fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - m) * (x - m) / n;
        }
    }
    let std = var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

/// Per-dimension affine maps for model inputs and state-delta targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_mean: vec![0.0; input_dim],
            input_std: vec![1.0; input_dim],
            target_mean: vec![0.0; output_dim],
            target_std: vec![1.0; output_dim],
        }
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        affine_in(x, &self.input_mean, &self.input_std)
    }

    pub fn denormalize_input(&self, z: &[f64]) -> Vec<f64> {
        affine_out(z, &self.input_mean, &self.input_std)
    }

    pub fn normalize_target(&self, y: &[f64]) -> Vec<f64> {
        affine_in(y, &self.target_mean, &self.target_std)
    }

    pub fn denormalize_target(&self, z: &[f64]) -> Vec<f64> {
        affine_out(z, &self.target_mean, &self.target_std)
    }
}

fn affine_in(x: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    x.iter().zip(mean.iter().zip(std)).map(|(x, (m, s))| (x - m) / s).collect()
}

fn affine_out(z: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    z.iter().zip(mean.iter().zip(std)).map(|(z, (m, s))| z * s + m).collect()
}
