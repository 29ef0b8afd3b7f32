use crate::rng::Rng;

use super::Environment;

/// Maps observations to actions.
pub trait Policy {
    fn act(&self, obs: &[f64], rng: &mut Rng) -> Vec<f64>;

    /// Row `i` may only draw randomness from `rngs[i]`, so batching never
    /// changes what any single rollout sees.
    fn act_batch(&self, obs: &[Vec<f64>], rngs: &mut [&mut Rng]) -> Vec<Vec<f64>> {
        obs.iter()
            .zip(rngs.iter_mut())
            .map(|(o, rng)| self.act(o, rng))
            .collect()
    }
}

/// A simulator state together with the first action taken from it.
#[derive(Debug, Clone, PartialEq)]
pub struct StartPair {
    pub state: Vec<f64>,
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
}

/// Smallest horizon `H` with `gamma^H < tail`.
pub fn horizon_for(gamma: f64, tail: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    let mut h = (tail.ln() / gamma.ln()).ceil().max(1.0) as usize;
    while gamma.powi(h as i32) >= tail {
        h += 1;
    }
    h
}

/// Monte-Carlo discounted returns `sum_{k<H} gamma^k r_k` of following `policy`
/// after taking each start's action from its state.
///
/// Rollouts ignore time-limit truncation and stop only on termination.
/// Returns `episodes` samples per start; start `i` draws only from `rngs[i]`.
pub fn mc_returns(
    env: &dyn Environment,
    policy: &dyn Policy,
    starts: &[StartPair],
    gamma: f64,
    horizon: usize,
    episodes: usize,
    rngs: &mut [Rng],
) -> Vec<Vec<f64>> {
    assert_eq!(starts.len(), rngs.len(), "one rng per start");
    let mut samples = vec![Vec::with_capacity(episodes); starts.len()];
    for _ in 0..episodes {
        let mut envs: Vec<Box<dyn Environment>> = starts
            .iter()
            .map(|s| {
                let mut e = env.boxed_clone();
                e.set_state(&s.state);
                e
            })
            .collect();
        let mut returns = vec![0.0; starts.len()];
        let mut discount = vec![1.0; starts.len()];
        let mut obs: Vec<Option<Vec<f64>>> = vec![None; starts.len()];
        for (i, s) in starts.iter().enumerate() {
            let r = envs[i].step(&s.action);
            returns[i] += r.reward;
            discount[i] = gamma;
            if !r.terminated {
                obs[i] = Some(r.observation);
            }
        }
        for _ in 1..horizon {
            let active: Vec<usize> = (0..starts.len()).filter(|&i| obs[i].is_some()).collect();
            if active.is_empty() {
                break;
            }
            let batch: Vec<Vec<f64>> = active.iter().map(|&i| obs[i].take().expect("active")).collect();
            let mut row_rngs: Vec<&mut Rng> = rngs
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| active.binary_search(i).is_ok())
                .map(|(_, r)| r)
                .collect();
            let actions = policy.act_batch(&batch, &mut row_rngs);
            for (&i, a) in active.iter().zip(&actions) {
                let r = envs[i].step(a);
                returns[i] += discount[i] * r.reward;
                discount[i] *= gamma;
                if !r.terminated {
                    obs[i] = Some(r.observation);
                }
            }
        }
        for (s, r) in samples.iter_mut().zip(returns) {
            s.push(r);
        }
    }
    samples
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain::STATES, ChainMdp, EnvSpec, RewardStyle, StepResult};
    use crate::rng::stream;
    use rand::RngCore;

    /// Pays 1 per step forever.
    #[derive(Clone)]
    struct Constant(EnvSpec);

    impl Constant {
        fn new() -> Self {
            Constant(EnvSpec {
                id: "constant",
                obs_dim: 1,
                action_dim: 1,
                dt: 1.0,
                max_episode_steps: 10,
                reward_style: RewardStyle::Dense,
                physics: Vec::new(),
                return_bounds: (0.0, 10.0),
            })
        }
    }

    impl Environment for Constant {
        fn spec(&self) -> &EnvSpec {
            &self.0
        }
        fn reset(&mut self, _: &mut dyn RngCore) -> Vec<f64> {
            vec![0.0]
        }
        fn step(&mut self, _: &[f64]) -> StepResult {
            StepResult {
                observation: vec![0.0],
                reward: 1.0,
                terminated: false,
                truncated: false,
            }
        }
        fn observation(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn state(&self) -> Vec<f64> {
            Vec::new()
        }
        fn set_state(&mut self, _: &[f64]) {}
        fn boxed_clone(&self) -> Box<dyn Environment> {
            Box::new(self.clone())
        }
    }

    struct Table([bool; STATES]);

    impl Policy for Table {
        fn act(&self, obs: &[f64], _: &mut Rng) -> Vec<f64> {
            vec![if self.0[ChainMdp::decode(obs)] { 1.0 } else { -1.0 }]
        }
    }

    fn start(state: Vec<f64>, action: f64) -> StartPair {
        StartPair {
            state,
            observation: Vec::new(),
            action: vec![action],
        }
    }

    #[test]
    fn horizon_meets_tail() {
        assert_eq!(horizon_for(0.0, 1e-3), 1);
        let h = horizon_for(0.99, 1e-3);
        assert_eq!(h, 688);
        assert!(0.99f64.powi(h as i32) < 1e-3 && 0.99f64.powi(h as i32 - 1) >= 1e-3);
    }

    #[test]
    fn constant_reward_gives_geometric_series() {
        let gamma = 0.99;
        let h = horizon_for(gamma, 1e-3);
        let mut rngs = vec![stream(0, 0)];
        let r = mc_returns(
            &Constant::new(),
            &Table([true; 3]),
            &[start(vec![], 0.0)],
            gamma,
            h,
            1,
            &mut rngs,
        );
        let tail = gamma.powi(h as i32) / (1.0 - gamma);
        assert!((r[0][0] - 100.0).abs() <= tail + 1e-9);
        let zero = mc_returns(
            &Constant::new(),
            &Table([true; 3]),
            &[start(vec![], 0.0)],
            0.0,
            1,
            1,
            &mut rngs,
        );
        assert_eq!(zero[0][0], 1.0);
    }

    #[test]
    fn chain_returns_match_dynamic_programming() {
        let gamma = 0.9;
        let h = horizon_for(gamma, 1e-14);
        for policy in [
            [true, true, true],
            [false, true, true],
            [true, false, true],
            [false, false, false],
        ] {
            let q = ChainMdp::q_values(policy, gamma);
            let mut starts = Vec::new();
            let mut expect = Vec::new();
            for (s, qs) in q.iter().enumerate() {
                for (dir, &value) in qs.iter().enumerate() {
                    starts.push(start(vec![s as f64, 0.0], if dir == 1 { 0.5 } else { -0.5 }));
                    expect.push(value);
                }
            }
            let mut rngs: Vec<Rng> = (0..starts.len()).map(|i| stream(1, i as u64)).collect();
            let got = mc_returns(&ChainMdp::new(), &Table(policy), &starts, gamma, h, 2, &mut rngs);
            for (g, e) in got.iter().zip(&expect) {
                for sample in g {
                    assert!((sample - e).abs() < 1e-10, "{sample} vs {e}");
                }
            }
        }
    }
}
