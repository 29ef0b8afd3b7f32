//! Desk-scale continuous-control environments.
//!
//! [`Environment`] is also the adapter point for external suites: anything
//! that can report a spec, reset from an RNG, step with an action in
//! `[-1, 1]^m`, and snapshot/restore its full state can be trained on and
//! diagnosed by the rest of the crate.

pub mod chain;
mod pendulum;
mod pointmass;
mod rollout;

pub use chain::ChainMdp;
pub use pendulum::Pendulum;
pub use pointmass::PointMass;
pub use rollout::{horizon_for, mc_returns, Policy, StartPair};

use rand::RngCore;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardStyle {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub id: &'static str,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Integration step in seconds.
    pub dt: f64,
    pub max_episode_steps: usize,
    pub reward_style: RewardStyle,
    pub physics: Vec<(&'static str, f64)>,
    /// Fixed `(worst, best)` episode-return bounds used to map returns to `[0, 1]`
    /// when aggregating across environments.
    pub return_bounds: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// True terminal state: the bootstrap is masked.
    pub terminated: bool,
    /// Time limit reached: the episode ends but bootstrapping continues.
    pub truncated: bool,
}

impl StepResult {
    pub fn episode_over(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Samples an initial state and returns its observation.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Advances one step. Action components are clamped to `[-1, 1]`.
    fn step(&mut self, action: &[f64]) -> StepResult;

    fn observation(&self) -> Vec<f64>;

    /// Full simulator state, including the elapsed step count.
    fn state(&self) -> Vec<f64>;

    fn set_state(&mut self, state: &[f64]);

    fn boxed_clone(&self) -> Box<dyn Environment>;
}

impl Clone for Box<dyn Environment> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

pub const ENV_IDS: [&str; 3] = ["pendulum-dense", "pendulum-sparse", "pointmass"];

pub fn make_env(id: &str) -> Result<Box<dyn Environment>> {
    match id {
        "pendulum-dense" => Ok(Box::new(Pendulum::new(RewardStyle::Dense))),
        "pendulum-sparse" => Ok(Box::new(Pendulum::new(RewardStyle::Sparse))),
        "pointmass" => Ok(Box::new(PointMass::new())),
        "chain" => Ok(Box::new(ChainMdp::new())),
        other => Err(Error::contract(format!(
            "unknown environment `{other}` (expected one of {ENV_IDS:?})"
        ))),
    }
}

pub(crate) fn clamp_action(a: f64) -> f64 {
    if a.is_nan() {
        0.0
    } else {
        a.clamp(-1.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn every_registered_env_builds() {
        for id in ENV_IDS {
            let env = make_env(id).unwrap();
            assert_eq!(env.spec().id, id);
            assert!(env.spec().dt > 0.0 && env.spec().max_episode_steps >= 1);
        }
        assert!(make_env("humanoid-run").is_err());
    }

    #[test]
    fn random_actions_stay_finite_and_flags_follow_contract() {
        for id in ENV_IDS {
            let mut env = make_env(id).unwrap();
            let mut rng = stream(5, 0);
            let max = env.spec().max_episode_steps;
            let m = env.spec().action_dim;
            for _episode in 0..3 {
                let obs = env.reset(&mut rng);
                assert!(obs.iter().all(|x| x.is_finite()));
                for t in 0..max {
                    let a: Vec<f64> = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
                    let r = env.step(&a);
                    assert!(r.reward.is_finite() && r.observation.iter().all(|x| x.is_finite()));
                    assert!(!r.terminated, "{id} has no terminal states");
                    assert_eq!(r.truncated, t + 1 == max);
                }
            }
        }
    }

    #[test]
    fn same_seed_and_actions_give_same_trajectory() {
        for id in ENV_IDS {
            let run = || {
                let mut env = make_env(id).unwrap();
                let mut rng = stream(9, 3);
                let mut trace = env.reset(&mut rng);
                for t in 0..50 {
                    let a = vec![((t as f64) * 0.37).sin(); env.spec().action_dim];
                    trace.extend(env.step(&a).observation);
                }
                trace
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn state_snapshot_restores_trajectory() {
        let mut env = make_env("pendulum-dense").unwrap();
        let mut rng = stream(2, 2);
        env.reset(&mut rng);
        env.step(&[0.3]);
        let snap = env.state();
        let a = env.step(&[-0.7]);
        env.set_state(&snap);
        let b = env.step(&[-0.7]);
        assert_eq!(a, b);
    }
}
