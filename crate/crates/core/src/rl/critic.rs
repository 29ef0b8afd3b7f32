use crate::checkpoint::Checkpoint;
use crate::nn::{Activation, BatchStats, BnMode, BoundMlp, Mlp, MlpSpec};
use crate::tensor::{Real, Tensor, Var};
use crate::{Error, Result};

use super::actor::squash;

/// Twin Q-networks over concatenated `(obs, action)`, with target copies
/// only when bootstrapping from Polyak-averaged networks.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair<T> {
    pub q: [Mlp<T>; 2],
    pub targets: Option<[Mlp<T>; 2]>,
}

impl<T: Real> CriticPair<T> {
    pub fn spec(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        batchnorm: bool,
        weight_norm: bool,
    ) -> MlpSpec {
        let mut widths = vec![obs_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let mut spec = MlpSpec::plain(&widths, activation);
        spec.input_batchnorm = batchnorm;
        spec.hidden_batchnorm = batchnorm;
        spec.weight_norm = weight_norm;
        spec
    }

    pub fn init<R: rand::Rng + ?Sized>(spec: &MlpSpec, with_targets: bool, rng: &mut R) -> Result<Self> {
        let q = [Mlp::init(spec, rng)?, Mlp::init(spec, rng)?];
        let targets = with_targets.then(|| q.clone());
        Ok(Self { q, targets })
    }

    /// `min(Q1, Q2)` with batch norm in eval mode, as `B x 1`.
    pub fn q_min(&self, obs: &Tensor<T>, actions: &Tensor<T>) -> Result<Tensor<T>> {
        let x = Tensor::hstack(&[obs, actions])?;
        let a = self.q[0].infer(&x)?;
        let b = self.q[1].infer(&x)?;
        let data = a.data().iter().zip(b.data()).map(|(&u, &v)| u.min(v)).collect();
        Ok(Tensor::from_vec(a.shape(), data)?)
    }

    /// `targets <- (1 - tau) targets + tau online`.
    pub fn polyak(&mut self, tau: f64) -> Result<()> {
        let Some(targets) = &mut self.targets else {
            return Err(Error::contract("polyak update on critics without targets"));
        };
        let tau = T::from_f64_lossy(tau);
        let keep = T::one() - tau;
        for (t, q) in targets.iter_mut().zip(&self.q) {
            for (tp, (_, qp)) in t.params_mut().into_iter().zip(q.named_params()) {
                for (x, &y) in tp.data_mut().iter_mut().zip(qp.data()) {
                    *x = keep * *x + tau * y;
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.q
            .iter()
            .chain(self.targets.iter().flatten())
            .map(Mlp::param_count)
            .sum()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (i, q) in self.q.iter().enumerate() {
            ck.extend(&format!("q{i}."), q.checkpoint());
        }
        for (i, t) in self.targets.iter().flatten().enumerate() {
            ck.extend(&format!("target{i}."), t.checkpoint());
        }
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        for (i, q) in self.q.iter_mut().enumerate() {
            q.restore(&ck.section(&format!("q{i}.")))?;
        }
        if let Some(targets) = &mut self.targets {
            for (i, t) in targets.iter_mut().enumerate() {
                t.restore(&ck.section(&format!("target{i}.")))?;
            }
        }
        Ok(())
    }
}

/// Tape inputs of a critic loss. All are `B x _`; rewards and dones are `B x 1`.
///
/// `next_actions` and `next_log_probs` are sampled from the current policy
/// at `next_obs` by the caller.
#[derive(Clone, Copy)]
pub struct CriticInputs<'t, T: Real> {
    pub obs: Var<'t, T>,
    pub actions: Var<'t, T>,
    pub rewards: Var<'t, T>,
    pub dones: Var<'t, T>,
    pub next_obs: Var<'t, T>,
    pub next_actions: Var<'t, T>,
    pub next_log_probs: Var<'t, T>,
}

pub struct CriticLoss<'t, T: Real> {
    pub loss: Var<'t, T>,
    /// Detached bootstrap target `y`, `B x 1`.
    pub target: Var<'t, T>,
    /// `Q_i(s, a)`, `B x 1`.
    pub q: [Var<'t, T>; 2],
    /// Train-mode batch statistics of each critic, to be committed once.
    pub stats: [Vec<BatchStats<T>>; 2],
}

fn backup<'t, T: Real>(inp: &CriticInputs<'t, T>, next_q: [Var<'t, T>; 2], gamma: T, alpha: T) -> Result<Var<'t, T>> {
    let soft = next_q[0].minimum(next_q[1])?.sub(inp.next_log_probs.scale(alpha))?;
    let live = inp.dones.neg().offset(T::one());
    let y = inp.rewards.add(live.mul(soft)?.scale(gamma))?;
    Ok(y.stop_gradient())
}

fn squared_error_sum<'t, T: Real>(q: [Var<'t, T>; 2], y: Var<'t, T>) -> Result<Var<'t, T>> {
    let l0 = q[0].sub(y)?.square().mean();
    let l1 = q[1].sub(y)?.square().mean();
    Ok(l0.add(l1)?)
}

fn check_batch<T: Real>(inp: &CriticInputs<'_, T>) -> Result<usize> {
    let b = inp.obs.shape()[0];
    for (name, v) in [
        ("actions", inp.actions),
        ("rewards", inp.rewards),
        ("dones", inp.dones),
        ("next_obs", inp.next_obs),
        ("next_actions", inp.next_actions),
        ("next_log_probs", inp.next_log_probs),
    ] {
        if v.shape().first() != Some(&b) {
            return Err(Error::contract(format!(
                "critic input `{name}` has {:?} rows, expected {b}",
                v.shape()
            )));
        }
    }
    Ok(b)
}

/// Target-network-free critic loss.
///
/// `(s, a)` and `(s', a')` are stacked into one `2B`-row batch and pushed
/// through each critic in a single train-mode pass, so batch-norm statistics
/// cover both distributions. The first `B` outputs are `Q(s, a)`, the rest
/// feed the detached target.
pub fn crossq_critic_loss<'t, T: Real>(
    critics: [&BoundMlp<'t, T>; 2],
    inp: &CriticInputs<'t, T>,
    gamma: T,
    alpha: T,
) -> Result<CriticLoss<'t, T>> {
    let b = check_batch(inp)?;
    let joint = Var::concat_rows(&[
        Var::concat_cols(&[inp.obs, inp.actions])?,
        Var::concat_cols(&[inp.next_obs, inp.next_actions])?,
    ])?;
    let (out0, stats0) = critics[0].forward(joint, BnMode::Train)?;
    let (out1, stats1) = critics[1].forward(joint, BnMode::Train)?;
    let q = [out0.slice_rows(0, b)?, out1.slice_rows(0, b)?];
    let next_q = [out0.slice_rows(b, 2 * b)?, out1.slice_rows(b, 2 * b)?];
    let target = backup(inp, next_q, gamma, alpha)?;
    Ok(CriticLoss {
        loss: squared_error_sum(q, target)?,
        target,
        q,
        stats: [stats0, stats1],
    })
}

/// Classic twin-critic loss bootstrapping from target networks.
pub fn sac_critic_loss<'t, T: Real>(
    critics: [&BoundMlp<'t, T>; 2],
    targets: [&BoundMlp<'t, T>; 2],
    inp: &CriticInputs<'t, T>,
    gamma: T,
    alpha: T,
) -> Result<CriticLoss<'t, T>> {
    check_batch(inp)?;
    let x = Var::concat_cols(&[inp.obs, inp.actions])?;
    let x2 = Var::concat_cols(&[inp.next_obs, inp.next_actions])?;
    let (q0, stats0) = critics[0].forward(x, BnMode::Train)?;
    let (q1, stats1) = critics[1].forward(x, BnMode::Train)?;
    let (t0, _) = targets[0].forward(x2, BnMode::Eval)?;
    let (t1, _) = targets[1].forward(x2, BnMode::Eval)?;
    let target = backup(inp, [t0, t1], gamma, alpha)?;
    Ok(CriticLoss {
        loss: squared_error_sum([q0, q1], target)?,
        target,
        q: [q0, q1],
        stats: [stats0, stats1],
    })
}

/// `mean(alpha * log_pi(a~|s) - min_i Q_i(s, a~))` with `a~` reparameterised.
///
/// Bind the critics frozen so they receive no gradient. Returns the loss and
/// the `B x 1` log-probabilities.
pub fn actor_loss<'t, T: Real>(
    actor: &BoundMlp<'t, T>,
    critics: [&BoundMlp<'t, T>; 2],
    obs: Var<'t, T>,
    eps: Var<'t, T>,
    action_dim: usize,
    alpha: T,
    critic_mode: BnMode,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let (out, _) = actor.forward(obs, BnMode::Eval)?;
    let (action, log_prob) = squash(out, eps, action_dim)?;
    let x = Var::concat_cols(&[obs, action])?;
    let (q0, _) = critics[0].forward(x, critic_mode)?;
    let (q1, _) = critics[1].forward(x, critic_mode)?;
    let loss = log_prob.scale(alpha).sub(q0.minimum(q1)?)?.mean();
    Ok((loss, log_prob))
}

/// `-log_alpha * mean(stop_gradient(log_pi + target_entropy))`.
pub fn temperature_loss<'t, T: Real>(
    log_alpha: Var<'t, T>,
    log_probs: Var<'t, T>,
    target_entropy: T,
) -> Result<Var<'t, T>> {
    let gap = log_probs.offset(target_entropy).mean().stop_gradient();
    Ok(log_alpha.mul(gap)?.neg().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::Tape;
    use rand::Rng;

    fn rand_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
        Tensor::from_vec(
            &[rows, cols],
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    struct Fixture {
        obs: Tensor<f64>,
        actions: Tensor<f64>,
        rewards: Tensor<f64>,
        dones: Tensor<f64>,
        next_obs: Tensor<f64>,
        next_actions: Tensor<f64>,
        next_log_probs: Tensor<f64>,
    }

    fn fixture(b: usize, seed: u64) -> Fixture {
        let mut rng = stream(seed, 77);
        Fixture {
            obs: rand_tensor(b, 3, &mut rng),
            actions: rand_tensor(b, 1, &mut rng),
            rewards: rand_tensor(b, 1, &mut rng),
            dones: Tensor::from_vec(&[b, 1], (0..b).map(|i| f64::from(u8::from(i % 3 == 0))).collect()).unwrap(),
            next_obs: rand_tensor(b, 3, &mut rng),
            next_actions: rand_tensor(b, 1, &mut rng),
            next_log_probs: rand_tensor(b, 1, &mut rng),
        }
    }

    impl Fixture {
        fn bind<'t>(&self, tape: &'t Tape<f64>) -> CriticInputs<'t, f64> {
            CriticInputs {
                obs: tape.param(self.obs.clone()),
                actions: tape.param(self.actions.clone()),
                rewards: tape.param(self.rewards.clone()),
                dones: tape.param(self.dones.clone()),
                next_obs: tape.param(self.next_obs.clone()),
                next_actions: tape.param(self.next_actions.clone()),
                next_log_probs: tape.param(self.next_log_probs.clone()),
            }
        }
    }

    fn crossq_pair(seed: u64) -> CriticPair<f64> {
        let spec = CriticPair::<f64>::spec(3, 1, &[8, 8], Activation::Relu, true, false);
        CriticPair::init(&spec, false, &mut stream(seed, 5)).unwrap()
    }

    #[test]
    fn zero_discount_targets_the_reward() {
        let pair = crossq_pair(1);
        let f = fixture(6, 1);
        let tape = Tape::new();
        let c = [pair.q[0].bind(&tape, true), pair.q[1].bind(&tape, true)];
        let l = crossq_critic_loss([&c[0], &c[1]], &f.bind(&tape), 0.0, 0.7).unwrap();
        assert_eq!(l.target.value(), f.rewards);
        let expected: f64 = (0..2)
            .map(|i| {
                let q = l.q[i].value();
                q.data()
                    .iter()
                    .zip(f.rewards.data())
                    .map(|(q, r)| (q - r).powi(2))
                    .sum::<f64>()
                    / 6.0
            })
            .sum();
        assert!((l.loss.value().item() - expected).abs() < 1e-14);
    }

    #[test]
    fn termination_masks_the_bootstrap() {
        let pair = crossq_pair(2);
        let mut f = fixture(4, 2);
        f.dones = Tensor::ones(&[4, 1]);
        let tape = Tape::new();
        let c = [pair.q[0].bind(&tape, true), pair.q[1].bind(&tape, true)];
        let l = crossq_critic_loss([&c[0], &c[1]], &f.bind(&tape), 0.99, 0.2).unwrap();
        assert_eq!(l.target.value(), f.rewards);
    }

    #[test]
    fn batch_statistics_cover_the_joint_batch() {
        let pair = crossq_pair(3);
        let f = fixture(5, 3);
        let tape = Tape::new();
        let c = [pair.q[0].bind(&tape, true), pair.q[1].bind(&tape, true)];
        let l = crossq_critic_loss([&c[0], &c[1]], &f.bind(&tape), 0.99, 0.2).unwrap();
        // input batch norm sees the stacked (s, a) and (s', a') rows
        let joint = Tensor::vstack(&[
            &Tensor::hstack(&[&f.obs, &f.actions]).unwrap(),
            &Tensor::hstack(&[&f.next_obs, &f.next_actions]).unwrap(),
        ])
        .unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..10).map(|r| joint.at(r, j)).collect();
            let mean = col.iter().sum::<f64>() / 10.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 10.0;
            for stats in &l.stats {
                assert!((stats[0].mean[j] - mean).abs() < 1e-10);
                assert!((stats[0].var[j] - var).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bootstrap_leaves_get_no_gradient() {
        let pair = crossq_pair(4);
        let f = fixture(6, 4);
        let tape = Tape::new();
        let c = [pair.q[0].bind(&tape, true), pair.q[1].bind(&tape, true)];
        let inp = f.bind(&tape);
        let l = crossq_critic_loss([&c[0], &c[1]], &inp, 0.99, 0.3).unwrap();
        tape.backward(l.loss).unwrap();
        for v in [inp.rewards, inp.dones, inp.next_log_probs] {
            assert!(v.grad().unwrap().data().iter().all(|&g| g == 0.0));
        }
        assert!(c[0].grads().iter().any(|g| g.data().iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn polyak_extremes() {
        let spec = CriticPair::<f64>::spec(3, 1, &[8], Activation::Relu, false, false);
        let mut pair = CriticPair::init(&spec, true, &mut stream(5, 5)).unwrap();
        let frozen = pair.targets.clone();
        pair.q[0].linears[0].weight = pair.q[0].linears[0].weight.scaled(2.0);
        pair.polyak(0.0).unwrap();
        assert_eq!(pair.targets, frozen);
        pair.polyak(1.0).unwrap();
        assert_eq!(pair.targets.as_ref().unwrap()[0], pair.q[0]);
        assert!(crossq_pair(1).polyak(0.5).is_err());
    }

    #[test]
    fn temperature_fixed_point_and_sign() {
        let tape = Tape::new();
        let log_alpha = tape.param(Tensor::from_vec(&[1], vec![0.3]).unwrap());
        let lp = tape.constant(Tensor::from_rows(&[vec![1.0], vec![3.0]]));
        tape.backward(temperature_loss(log_alpha, lp, -2.0).unwrap()).unwrap();
        assert_eq!(log_alpha.grad().unwrap().item(), 0.0);

        // log-probs far above -target means entropy far below target: the
        // gradient is negative so a descent step raises alpha
        let tape = Tape::new();
        let log_alpha = tape.param(Tensor::from_vec(&[1], vec![0.3]).unwrap());
        let lp = tape.constant(Tensor::from_rows(&[vec![5.0], vec![7.0]]));
        tape.backward(temperature_loss(log_alpha, lp, -1.0).unwrap()).unwrap();
        assert!(log_alpha.grad().unwrap().item() < 0.0);
    }
}
