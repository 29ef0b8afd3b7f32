use rand::{Rng, RngCore};

use super::{clamp_action, EnvSpec, Environment, RewardStyle, StepResult};

pub const MASS: f64 = 1.0;
pub const DAMPING: f64 = 1.0;
pub const MAX_FORCE: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const EPISODE_STEPS: usize = 200;
pub const GOAL: [f64; 2] = [0.0, 0.0];

/// Planar damped double integrator that should be driven to [`GOAL`].
///
/// Dynamics `m v' = F - m c v`, `x' = v`, integrated exactly under a force
/// held constant over each step. Reward is the negative distance to the goal.
#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    elapsed: usize,
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new()
    }
}

impl PointMass {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                id: "pointmass",
                obs_dim: 4,
                action_dim: 2,
                dt: DT,
                max_episode_steps: EPISODE_STEPS,
                reward_style: RewardStyle::Dense,
                physics: vec![("mass", MASS), ("damping", DAMPING), ("max_force", MAX_FORCE)],
                return_bounds: (-600.0, 0.0),
            },
            pos: GOAL,
            vel: [0.0; 2],
            elapsed: 0,
        }
    }

    pub fn distance_to_goal(&self) -> f64 {
        ((self.pos[0] - GOAL[0]).powi(2) + (self.pos[1] - GOAL[1]).powi(2)).sqrt()
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.pos = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        self.vel = [0.0; 2];
        self.elapsed = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let reward = -self.distance_to_goal();
        let decay = (-DAMPING * DT).exp();
        for (k, &a) in action.iter().enumerate().take(2) {
            let terminal = clamp_action(a) * MAX_FORCE / (MASS * DAMPING);
            let v0 = self.vel[k];
            self.pos[k] += terminal * DT + (v0 - terminal) * (1.0 - decay) / DAMPING;
            self.vel[k] = terminal + (v0 - terminal) * decay;
        }
        self.elapsed += 1;
        StepResult {
            observation: self.observation(),
            reward,
            terminated: false,
            truncated: self.elapsed >= EPISODE_STEPS,
        }
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    fn state(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.elapsed as f64]
    }

    fn set_state(&mut self, state: &[f64]) {
        self.pos = [state[0], state[1]];
        self.vel = [state[2], state[3]];
        self.elapsed = state[4] as usize;
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
