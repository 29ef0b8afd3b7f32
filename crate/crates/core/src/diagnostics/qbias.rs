use rand::Rng as _;

use crate::envs::{horizon_for, mc_returns, Environment, Policy, StartPair};
use crate::rl::CriticPair;
use crate::rng::{self, Rng};
use crate::tensor::{Real, Tensor};
use crate::Result;

/// A state-action value estimate evaluated row by row.
pub trait QFunction {
    fn q_values(&self, obs: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// `min(Q1, Q2)` with batch norm in eval mode.
impl<T: Real> QFunction for CriticPair<T> {
    fn q_values(&self, obs: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<f64>> {
        let flat = |rows: &[Vec<f64>]| -> Result<Tensor<T>> {
            let w = rows.first().map_or(0, Vec::len);
            let data: Vec<f64> = rows.iter().flatten().copied().collect();
            Ok(Tensor::from_f64(&[rows.len(), w], &data)?)
        };
        Ok(self.q_min(&flat(obs)?, &flat(actions)?)?.to_f64_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QBiasConfig {
    pub n_states: usize,
    /// Rollout horizon is the smallest `H` with `gamma^H < tail`.
    pub tail: f64,
    /// Monte-Carlo rollouts per state-action pair.
    pub episodes: usize,
}

impl Default for QBiasConfig {
    fn default() -> Self {
        Self {
            n_states: 256,
            tail: 1e-3,
            episodes: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QBiasEstimate {
    pub mean_bias: f64,
    pub std_bias: f64,
    /// `mean_bias / max(|mean_return|, 1)`.
    pub normalized_mean_bias: f64,
    pub mean_return: f64,
    pub n_samples: usize,
}

impl QBiasEstimate {
    pub fn from_pairs(q: &[f64], returns: &[f64]) -> Self {
        let n = q.len();
        let bias: Vec<f64> = q.iter().zip(returns).map(|(q, r)| q - r).collect();
        let mean_bias = bias.iter().sum::<f64>() / n as f64;
        let mean_return = returns.iter().sum::<f64>() / n as f64;
        let std_bias = if n > 1 {
            (bias.iter().map(|b| (b - mean_bias).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean_bias,
            std_bias,
            normalized_mean_bias: mean_bias / mean_return.abs().max(1.0),
            mean_return,
            n_samples: n,
        }
    }
}

/// Start pairs visited by the current policy, one private stream per pair.
///
/// Pair `i` resets a fresh copy of `env` from its stream, follows the policy
/// for a uniformly drawn number of steps below the episode limit (resetting on
/// termination), then samples its action.
pub fn sample_start_pairs(
    env: &dyn Environment,
    policy: &dyn Policy,
    n: usize,
    base_seed: u64,
) -> (Vec<StartPair>, Vec<Rng>) {
    let mut rngs: Vec<Rng> = (0..n as u64).map(|i| rng::stream(base_seed, i)).collect();
    let mut envs: Vec<Box<dyn Environment>> = (0..n).map(|_| env.boxed_clone()).collect();
    let mut obs: Vec<Vec<f64>> = envs.iter_mut().zip(&mut rngs).map(|(e, r)| e.reset(r)).collect();
    let limit = env.spec().max_episode_steps;
    let depth: Vec<usize> = rngs.iter_mut().map(|r| r.random_range(0..limit)).collect();
    let longest = depth.iter().copied().max().unwrap_or(0);
    for t in 0..longest {
        let active: Vec<usize> = (0..n).filter(|&i| t < depth[i]).collect();
        let batch: Vec<Vec<f64>> = active.iter().map(|&i| obs[i].clone()).collect();
        let mut row_rngs: Vec<&mut Rng> = rngs
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| t < depth[*i])
            .map(|(_, r)| r)
            .collect();
        let actions = policy.act_batch(&batch, &mut row_rngs);
        for (&i, a) in active.iter().zip(&actions) {
            let r = envs[i].step(a);
            obs[i] = if r.terminated {
                envs[i].reset(&mut rngs[i])
            } else {
                r.observation
            };
        }
    }
    let mut all: Vec<&mut Rng> = rngs.iter_mut().collect();
    let actions = policy.act_batch(&obs, &mut all);
    let starts = envs
        .iter()
        .zip(obs)
        .zip(actions)
        .map(|((e, observation), action)| StartPair {
            state: e.state(),
            observation,
            action,
        })
        .collect();
    (starts, rngs)
}

/// Critic value minus Monte-Carlo return of the current policy, over pairs
/// visited by that policy.
pub fn q_bias(
    critic: &dyn QFunction,
    policy: &dyn Policy,
    env: &dyn Environment,
    gamma: f64,
    config: &QBiasConfig,
    rng: &mut Rng,
) -> Result<QBiasEstimate> {
    let base_seed = rng.random::<u64>();
    let (starts, mut rngs) = sample_start_pairs(env, policy, config.n_states, base_seed);
    let horizon = horizon_for(gamma, config.tail);
    let samples = mc_returns(env, policy, &starts, gamma, horizon, config.episodes, &mut rngs);
    let returns: Vec<f64> = samples.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
    let obs: Vec<Vec<f64>> = starts.iter().map(|s| s.observation.clone()).collect();
    let actions: Vec<Vec<f64>> = starts.iter().map(|s| s.action.clone()).collect();
    let q = critic.q_values(&obs, &actions)?;
    Ok(QBiasEstimate::from_pairs(&q, &returns))
}
