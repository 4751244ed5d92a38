//! Desk-scale tasks: point-mass navigation around obstacles, a two-mode
//! action-space objective, pendulum swing-up and a small linear system.
//!
//! The point-mass reward and the two-mode objective are surrogate shapes with
//! overridable parameters; only the point-mass step cap (`0.05`) and the
//! shaping functions `shaping_phi` / `shaping_psi` are fixed conventions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ActionBounds, EnvSpec};

/// A deterministic environment with a per-transition reward.
pub trait Task: Send + Sync {
    fn spec(&self) -> EnvSpec;
    fn initial_state(&self) -> Vec<f64>;
    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64>;
    /// Reward for the transition `state --action--> next`.
    fn reward(&self, state: &[f64], action: &[f64], next: &[f64]) -> f64;
}

/// Weight of the obstacle penalty in [`pointmass_reward`].
pub const OBSTACLE_PENALTY: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Point mass on the plane driven by displacement commands `(dx, dy)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointMassTask {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub obstacles: Vec<Obstacle>,
    pub max_step: f64,
}

impl Default for PointMassTask {
    /// Three obstacles straddle the straight line from start to goal, so the
    /// shortest routes pass either above or below the middle one. The layout
    /// is mirror-symmetric about `y = 0`.
    fn default() -> Self {
        Self {
            start: [0.0, 0.0],
            goal: [1.0, 0.0],
            obstacles: vec![
                Obstacle { center: [0.5, 0.0], radius: 0.2 },
                Obstacle { center: [0.5, 0.5], radius: 0.15 },
                Obstacle { center: [0.5, -0.5], radius: 0.15 },
            ],
            max_step: 0.05,
        }
    }
}

impl PointMassTask {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_step > 0.0) {
            return Err(Error::invalid_config("max_step", "must be positive"));
        }
        if self.obstacles.iter().any(|o| !(o.radius > 0.0)) {
            return Err(Error::invalid_config("obstacles", "radii must be positive"));
        }
        Ok(())
    }
}

/// Project `a` radially onto the disc `||a|| <= max_step` and add it to `s`.
pub fn pointmass_step(s: &[f64], a: &[f64], max_step: f64) -> Vec<f64> {
    let norm = a[0].hypot(a[1]);
    let scale = if norm > max_step { max_step / norm } else { 1.0 };
    vec![s[0] + a[0] * scale, s[1] + a[1] * scale]
}

/// `-||s' - goal|| - 100 * sum_o max(0, 1 - ||s' - c_o|| / r_o)^2`.
pub fn pointmass_reward(next: &[f64], task: &PointMassTask) -> f64 {
    let dist = (next[0] - task.goal[0]).hypot(next[1] - task.goal[1]);
    let penalty: f64 = task
        .obstacles
        .iter()
        .map(|o| {
            let d = (next[0] - o.center[0]).hypot(next[1] - o.center[1]);
            let h = (1.0 - d / o.radius).max(0.0);
            h * h
        })
        .sum();
    -dist - OBSTACLE_PENALTY * penalty
}

impl Task for PointMassTask {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 2,
            action_dim: 2,
            bounds: ActionBounds::symmetric(2, self.max_step).expect("positive max_step"),
        }
    }

    fn initial_state(&self) -> Vec<f64> {
        self.start.to_vec()
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        pointmass_step(state, action, self.max_step)
    }

    fn reward(&self, _state: &[f64], _action: &[f64], next: &[f64]) -> f64 {
        pointmass_reward(next, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub center: [f64; 2],
    pub height: f64,
    pub width: f64,
}

/// Sum of isotropic Gaussian bumps over a 2-D action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultimodalObjective {
    pub modes: Vec<Mode>,
    /// Box bound applied to both action coordinates.
    pub bound: f64,
}

fn default_objective_bound() -> f64 {
    3.0
}

impl Default for MultimodalObjective {
    fn default() -> Self {
        Self {
            modes: vec![
                Mode { center: [-1.0, 0.0], height: 1.0, width: 0.3 },
                Mode { center: [1.0, 0.0], height: 0.9, width: 0.3 },
            ],
            bound: default_objective_bound(),
        }
    }
}

impl MultimodalObjective {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::invalid_config("modes", "at least one mode required"));
        }
        if self.modes.iter().any(|m| !(m.height > 0.0 && m.width > 0.0)) {
            return Err(Error::invalid_config("modes", "heights and widths must be positive"));
        }
        if !(self.bound > 0.0) {
            return Err(Error::invalid_config("bound", "must be positive"));
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        self.modes.iter().map(|m| m.center).collect()
    }
}

/// `sum_modes h * exp(-||a - c||^2 / (2 w^2))`.
pub fn multimodal_eval(a: &[f64], obj: &MultimodalObjective) -> f64 {
    obj.modes
        .iter()
        .map(|m| {
            let dx = a[0] - m.center[0];
            let dy = a[1] - m.center[1];
            m.height * (-(dx * dx + dy * dy) / (2.0 * m.width * m.width)).exp()
        })
        .sum()
}

/// The objective viewed as a one-step task: the state is a constant dummy
/// and the reward of the single transition is the objective value.
impl Task for MultimodalObjective {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 1,
            action_dim: 2,
            bounds: ActionBounds::symmetric(2, self.bound).expect("positive bound"),
        }
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn step(&self, state: &[f64], _action: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn reward(&self, _state: &[f64], action: &[f64], _next: &[f64]) -> f64 {
        multimodal_eval(action, self)
    }
}

/// Height shaping `exp(-(z - z_des)^2)`.
pub fn shaping_phi(z: f64, z_des: f64) -> f64 {
    (-(z - z_des).powi(2)).exp()
}

/// Orientation shaping `(1 + cos 2 phi) / 2`.
pub fn shaping_psi(angle: f64) -> f64 {
    (1.0 + (2.0 * angle).cos()) / 2.0
}

/// Torque-driven pendulum. `theta = 0` is upright; the state is encoded as
/// `(cos theta, sin theta, theta_dot)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumTask {
    pub gravity: f64,
    pub length: f64,
    pub mass: f64,
    pub dt: f64,
    pub max_torque: f64,
    /// Starting angle; `pi` hangs straight down.
    pub initial_angle: f64,
}

impl Default for PendulumTask {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            length: 1.0,
            mass: 1.0,
            dt: 0.05,
            max_torque: 2.0,
            initial_angle: PI,
        }
    }
}

impl PendulumTask {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gravity", self.gravity),
            ("length", self.length),
            ("mass", self.mass),
            ("dt", self.dt),
            ("max_torque", self.max_torque),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid_config(name, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn encode(angle: f64, velocity: f64) -> Vec<f64> {
        vec![angle.cos(), angle.sin(), velocity]
    }

    pub fn angle(state: &[f64]) -> f64 {
        state[1].atan2(state[0])
    }

    /// Total mechanical energy with the pivot as reference height.
    pub fn energy(&self, state: &[f64]) -> f64 {
        let inertia = self.mass * self.length * self.length;
        0.5 * inertia * state[2] * state[2] + self.mass * self.gravity * self.length * state[0]
    }
}

/// Semi-implicit Euler step of `theta'' = (g/l) sin theta + u / (m l^2)`.
pub fn pendulum_step(s: &[f64], torque: f64, dt: f64, p: &PendulumTask) -> Vec<f64> {
    let u = torque.clamp(-p.max_torque, p.max_torque);
    let theta = PendulumTask::angle(s);
    let accel = p.gravity / p.length * theta.sin() + u / (p.mass * p.length * p.length);
    let velocity = s[2] + dt * accel;
    PendulumTask::encode(theta + dt * velocity, velocity)
}

/// `-(angle_error^2 + 0.1 theta_dot^2 + 0.001 u^2)` with the angle error
/// measured from upright.
pub fn pendulum_reward(s: &[f64], torque: f64) -> f64 {
    let err = PendulumTask::angle(s);
    -(err * err + 0.1 * s[2] * s[2] + 0.001 * torque * torque)
}

impl Task for PendulumTask {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 3,
            action_dim: 1,
            bounds: ActionBounds::symmetric(1, self.max_torque).expect("positive torque"),
        }
    }

    fn initial_state(&self) -> Vec<f64> {
        Self::encode(self.initial_angle, 0.0)
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        pendulum_step(state, action[0], self.dt, self)
    }

    fn reward(&self, _state: &[f64], action: &[f64], next: &[f64]) -> f64 {
        pendulum_reward(next, action[0].clamp(-self.max_torque, self.max_torque))
    }
}

/// `s' = A s + B a` with a quadratic regulation reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearTestTask {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub initial_state: Vec<f64>,
    pub action_limit: f64,
}

impl Default for LinearTestTask {
    fn default() -> Self {
        Self {
            a: vec![vec![1.0, 0.1], vec![0.0, 0.95]],
            b: vec![vec![0.0], vec![0.1]],
            initial_state: vec![1.0, 0.0],
            action_limit: 1.0,
        }
    }
}

impl LinearTestTask {
    pub fn validate(&self) -> Result<()> {
        let n = self.a.len();
        if n == 0 || self.a.iter().any(|r| r.len() != n) {
            return Err(Error::invalid_config("a", "must be a non-empty square matrix"));
        }
        let m = self.b.first().map_or(0, Vec::len);
        if self.b.len() != n || m == 0 || self.b.iter().any(|r| r.len() != m) {
            return Err(Error::invalid_config("b", "must be state_dim x action_dim"));
        }
        if self.initial_state.len() != n {
            return Err(Error::invalid_config("initial_state", "length must equal state_dim"));
        }
        if !(self.action_limit > 0.0) {
            return Err(Error::invalid_config("action_limit", "must be positive"));
        }
        Ok(())
    }
}

impl Task for LinearTestTask {
    fn spec(&self) -> EnvSpec {
        let action_dim = self.b[0].len();
        EnvSpec {
            state_dim: self.a.len(),
            action_dim,
            bounds: ActionBounds::symmetric(action_dim, self.action_limit).expect("positive limit"),
        }
    }

    fn initial_state(&self) -> Vec<f64> {
        self.initial_state.clone()
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(ar, br)| {
                ar.iter().zip(state).map(|(x, y)| x * y).sum::<f64>()
                    + br.iter().zip(action).map(|(x, y)| x * y).sum::<f64>()
            })
            .collect()
    }

    fn reward(&self, _state: &[f64], action: &[f64], next: &[f64]) -> f64 {
        -(next.iter().map(|x| x * x).sum::<f64>() + 0.01 * action.iter().map(|u| u * u).sum::<f64>())
    }
}

/// Any of the built-in tasks, selectable by name from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum Env {
    PointMass(PointMassTask),
    Pendulum(PendulumTask),
    LinearTest(LinearTestTask),
    Multimodal(MultimodalObjective),
}

impl Env {
    /// Default instance of a named task.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "point_mass" => Ok(Env::PointMass(PointMassTask::default())),
            "pendulum" => Ok(Env::Pendulum(PendulumTask::default())),
            "linear_test" => Ok(Env::LinearTest(LinearTestTask::default())),
            "multimodal" => Ok(Env::Multimodal(MultimodalObjective::default())),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Env::PointMass(_) => "point_mass",
            Env::Pendulum(_) => "pendulum",
            Env::LinearTest(_) => "linear_test",
            Env::Multimodal(_) => "multimodal",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Env::PointMass(t) => t.validate(),
            Env::Pendulum(t) => t.validate(),
            Env::LinearTest(t) => t.validate(),
            Env::Multimodal(t) => t.validate(),
        }
    }

    fn inner(&self) -> &dyn Task {
        match self {
            Env::PointMass(t) => t,
            Env::Pendulum(t) => t,
            Env::LinearTest(t) => t,
            Env::Multimodal(t) => t,
        }
    }
}

impl Task for Env {
    fn spec(&self) -> EnvSpec {
        self.inner().spec()
    }

    fn initial_state(&self) -> Vec<f64> {
        self.inner().initial_state()
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        self.inner().step(state, action)
    }

    fn reward(&self, state: &[f64], action: &[f64], next: &[f64]) -> f64 {
        self.inner().reward(state, action, next)
    }
}
