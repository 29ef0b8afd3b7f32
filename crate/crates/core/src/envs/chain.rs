use rand::{Rng, RngCore};

use super::{clamp_action, EnvSpec, Environment, RewardStyle, StepResult};

pub const STATES: usize = 3;

/// `REWARDS[s][0]` pays for moving left from `s`, `REWARDS[s][1]` for moving right.
pub const REWARDS: [[f64; 2]; STATES] = [[0.25, 1.0], [0.5, 2.0], [1.0, 3.0]];

/// Deterministic three-state chain with a known transition table.
///
/// Observation is the one-hot state. A non-negative action moves right,
/// a negative one moves left (the left end is a wall). Moving right from
/// the last state terminates the episode. All rewards are non-negative.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    spec: EnvSpec,
    pub state: usize,
    elapsed: usize,
}

impl Default for ChainMdp {
    fn default() -> Self {
        Self::new()
    }
}

impl ChainMdp {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                id: "chain",
                obs_dim: STATES,
                action_dim: 1,
                dt: 1.0,
                max_episode_steps: 50,
                reward_style: RewardStyle::Dense,
                physics: Vec::new(),
                return_bounds: (0.0, 150.0),
            },
            state: 0,
            elapsed: 0,
        }
    }

    /// `(next_state, reward, terminal)` for a state and a direction (`true` = right).
    pub fn transition(state: usize, right: bool) -> (usize, f64, bool) {
        let reward = REWARDS[state][usize::from(right)];
        match (state, right) {
            (s, true) if s + 1 == STATES => (s, reward, true),
            (s, true) => (s + 1, reward, false),
            (0, false) => (0, reward, false),
            (s, false) => (s - 1, reward, false),
        }
    }

    pub fn one_hot(state: usize) -> Vec<f64> {
        let mut v = vec![0.0; STATES];
        v[state] = 1.0;
        v
    }

    /// Decodes a one-hot observation.
    pub fn decode(obs: &[f64]) -> usize {
        obs.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty observation")
    }

    /// Exact `Q(s, direction)` of the deterministic policy `moves[s]`,
    /// by value iteration to a fixed point.
    pub fn q_values(moves: [bool; STATES], gamma: f64) -> [[f64; 2]; STATES] {
        let mut v = [0.0; STATES];
        for _ in 0..1_000_000 {
            let mut next = [0.0; STATES];
            for (s, n) in next.iter_mut().enumerate() {
                let (s2, r, done) = Self::transition(s, moves[s]);
                *n = r + if done { 0.0 } else { gamma * v[s2] };
            }
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta <= 1e-15 * v.iter().fold(1.0, |m, x| x.abs().max(m)) {
                break;
            }
        }
        let mut q = [[0.0; 2]; STATES];
        for (s, row) in q.iter_mut().enumerate() {
            for (dir, cell) in row.iter_mut().enumerate() {
                let (s2, r, done) = Self::transition(s, dir == 1);
                *cell = r + if done { 0.0 } else { gamma * v[s2] };
            }
        }
        q
    }
}

impl Environment for ChainMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.state = rng.random_range(0..STATES);
        self.elapsed = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let (next, reward, terminated) = Self::transition(self.state, clamp_action(action[0]) >= 0.0);
        self.state = next;
        self.elapsed += 1;
        StepResult {
            observation: self.observation(),
            reward,
            terminated,
            truncated: !terminated && self.elapsed >= self.spec.max_episode_steps,
        }
    }

    fn observation(&self) -> Vec<f64> {
        Self::one_hot(self.state)
    }

    fn state(&self) -> Vec<f64> {
        vec![self.state as f64, self.elapsed as f64]
    }

    fn set_state(&mut self, state: &[f64]) {
        self.state = state[0] as usize;
        self.elapsed = state[1] as usize;
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn always_right_values_by_hand() {
        let q = ChainMdp::q_values([true; STATES], 0.5);
        // V(2) = 3, V(1) = 2 + 0.5 * 3, V(0) = 1 + 0.5 * 3.5
        assert_eq!(q[2][1], 3.0);
        assert_eq!(q[1][1], 3.5);
        assert_eq!(q[0][1], 2.75);
        assert_eq!(q[0][0], 0.25 + 0.5 * 2.75);
    }
}
