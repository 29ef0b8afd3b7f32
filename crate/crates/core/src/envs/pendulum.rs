use std::f64::consts::PI;

use rand::{Rng, RngCore};

use super::{clamp_action, EnvSpec, Environment, RewardStyle, StepResult};

pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const GRAVITY: f64 = 10.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const MAX_SPEED: f64 = 8.0;
pub const DT: f64 = 0.05;
pub const EPISODE_STEPS: usize = 200;
/// Half-width of the upright band that pays the sparse reward.
pub const SPARSE_BAND: f64 = 0.15;

/// Torque-limited pendulum swing-up.
///
/// `theta` is measured from upright, so `theta = pi` hangs at rest. The
/// motor can deliver a fifth of the maximum gravitational torque; getting up
/// requires pumping energy over several swings.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    pub theta: f64,
    pub theta_dot: f64,
    elapsed: usize,
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new(style: RewardStyle) -> Self {
        let (id, bounds) = match style {
            RewardStyle::Dense => ("pendulum-dense", (-3300.0, 0.0)),
            RewardStyle::Sparse => ("pendulum-sparse", (0.0, EPISODE_STEPS as f64)),
        };
        Self {
            spec: EnvSpec {
                id,
                obs_dim: 3,
                action_dim: 1,
                dt: DT,
                max_episode_steps: EPISODE_STEPS,
                reward_style: style,
                physics: vec![
                    ("mass", MASS),
                    ("length", LENGTH),
                    ("gravity", GRAVITY),
                    ("max_torque", MAX_TORQUE),
                    ("max_speed", MAX_SPEED),
                ],
                return_bounds: bounds,
            },
            theta: PI,
            theta_dot: 0.0,
            elapsed: 0,
        }
    }

    pub fn reward(&self, theta: f64, theta_dot: f64, u: f64) -> f64 {
        let err = wrap_angle(theta);
        match self.spec.reward_style {
            RewardStyle::Dense => -(err * err + 0.1 * theta_dot * theta_dot + 0.001 * u * u),
            RewardStyle::Sparse => {
                if err.abs() < SPARSE_BAND {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Angular acceleration for normalised action `u`.
    pub fn acceleration(theta: f64, u: f64) -> f64 {
        GRAVITY / LENGTH * theta.sin() + u * MAX_TORQUE / (MASS * LENGTH * LENGTH)
    }

    /// Kinetic plus potential energy per unit mass, zero when hanging at rest.
    pub fn energy(theta: f64, theta_dot: f64) -> f64 {
        0.5 * LENGTH * LENGTH * theta_dot * theta_dot + GRAVITY * LENGTH * (1.0 + theta.cos())
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.elapsed = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let u = clamp_action(action[0]);
        let reward = self.reward(self.theta, self.theta_dot, u);
        // semi-implicit Euler: velocity first, then position with the new velocity
        let acc = Self::acceleration(self.theta, u);
        self.theta_dot = (self.theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * DT;
        self.elapsed += 1;
        StepResult {
            observation: self.observation(),
            reward,
            terminated: false,
            truncated: self.elapsed >= EPISODE_STEPS,
        }
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    fn state(&self) -> Vec<f64> {
        vec![self.theta, self.theta_dot, self.elapsed as f64]
    }

    fn set_state(&mut self, state: &[f64]) {
        self.theta = state[0];
        self.theta_dot = state[1];
        self.elapsed = state[2] as usize;
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
