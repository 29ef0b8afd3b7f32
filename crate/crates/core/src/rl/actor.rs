use rand_distr::StandardNormal;

use crate::nn::{Activation, BnMode, BoundMlp, Mlp, MlpSpec};
use crate::tensor::{Real, Tensor, Var};
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Tanh-squashed diagonal Gaussian policy.
///
/// The network maps an observation to `(mean, log_std)` per action
/// dimension. Actions are `tanh(mean + std * eps)` with `eps ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor<T> {
    pub net: Mlp<T>,
    pub action_dim: usize,
}

/// Mean, log-std and noise in, `(action, log_prob)` out, with `log_prob` as `B x 1`.
pub fn squash<'t, T: Real>(out: Var<'t, T>, eps: Var<'t, T>, action_dim: usize) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let m = action_dim;
    let mean = out.slice_cols(0, m)?;
    let log_std = out
        .slice_cols(m, 2 * m)?
        .clamp(T::from_f64_lossy(LOG_STD_MIN), T::from_f64_lossy(LOG_STD_MAX));
    let u = mean.add(log_std.exp().mul(eps)?)?;
    let action = u.tanh();
    let gauss = eps
        .square()
        .scale(T::from_f64_lossy(-0.5))
        .sub(log_std)?
        .offset(T::from_f64_lossy(-HALF_LOG_TWO_PI));
    // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
    let log_jac = u
        .neg()
        .sub(u.scale(T::from_f64_lossy(-2.0)).softplus())?
        .offset(T::from_f64_lossy(std::f64::consts::LN_2))
        .scale(T::from_f64_lossy(2.0));
    let log_prob = gauss.sub(log_jac)?.sum_axis(1)?;
    Ok((action, log_prob))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<T: Real> Actor<T> {
    pub fn spec(obs_dim: usize, action_dim: usize, hidden: &[usize], activation: Activation) -> MlpSpec {
        let mut widths = vec![obs_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * action_dim);
        MlpSpec::plain(&widths, activation)
    }

    pub fn init<R: rand::Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            net: Mlp::init(&Self::spec(obs_dim, action_dim, hidden, activation), rng)?,
            action_dim,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_width()
    }

    /// Standard normal noise for `rows` samples.
    pub fn noise<R: rand::Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Tensor<T> {
        let data = (0..rows * self.action_dim)
            .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Tensor::from_vec(&[rows, self.action_dim], data).expect("positive extents")
    }

    /// Deterministic action `tanh(mean)`.
    pub fn mean_action(&self, obs: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.net.infer(obs)?;
        let (rows, _) = out.dims2()?;
        let m = self.action_dim;
        let data = (0..rows)
            .flat_map(|r| out.row(r)[..m].iter().map(|x| x.tanh()).collect::<Vec<_>>())
            .collect();
        Ok(Tensor::from_vec(&[rows, m], data)?)
    }

    /// Tape-free reparameterised sample: `(actions, log_probs)` with
    /// `log_probs` as `B x 1`. Row `r` depends only on `obs` row `r` and
    /// `eps` row `r`.
    pub fn sample_with_noise(&self, obs: &Tensor<T>, eps: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let out = self.net.infer(obs)?;
        let (rows, _) = out.dims2()?;
        let m = self.action_dim;
        if eps.shape() != [rows, m] {
            return Err(Error::contract(format!(
                "policy noise has shape {:?}, expected [{rows}, {m}]",
                eps.shape()
            )));
        }
        let mut actions = Vec::with_capacity(rows * m);
        let mut log_probs = Vec::with_capacity(rows);
        for r in 0..rows {
            let o = out.row(r);
            let mut lp = 0.0;
            for j in 0..m {
                let mean = o[j].as_f64();
                let log_std = o[m + j].as_f64().clamp(LOG_STD_MIN, LOG_STD_MAX);
                let e = eps.at(r, j).as_f64();
                let u = mean + log_std.exp() * e;
                actions.push(T::from_f64_lossy(u.tanh()));
                let log_jac = 2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u));
                lp += -0.5 * e * e - log_std - HALF_LOG_TWO_PI - log_jac;
            }
            log_probs.push(T::from_f64_lossy(lp));
        }
        Ok((
            Tensor::from_vec(&[rows, m], actions)?,
            Tensor::from_vec(&[rows, 1], log_probs)?,
        ))
    }
}

/// Forward pass of a bound actor network into `(action, log_prob)`.
pub fn sample_vars<'t, T: Real>(
    actor: &BoundMlp<'t, T>,
    obs: Var<'t, T>,
    eps: Var<'t, T>,
    action_dim: usize,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let (out, _) = actor.forward(obs, BnMode::Eval)?;
    squash(out, eps, action_dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::Tape;
    use rand::Rng as _;

    fn actor(seed: u64) -> Actor<f64> {
        Actor::init(3, 2, &[16, 16], Activation::Relu, &mut stream(seed, 0)).unwrap()
    }

    fn obs(rows: usize, seed: u64) -> Tensor<f64> {
        let mut rng = stream(seed, 9);
        let data = (0..rows * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::from_vec(&[rows, 3], data).unwrap()
    }

    #[test]
    fn tape_and_inference_paths_agree() {
        let a = actor(1);
        let o = obs(32, 1);
        let eps = a.noise(32, &mut stream(1, 1));
        let (act, lp) = a.sample_with_noise(&o, &eps).unwrap();
        let tape = Tape::new();
        let bound = a.net.bind(&tape, false);
        let (va, vlp) = sample_vars(&bound, tape.constant(o), tape.constant(eps), 2).unwrap();
        for (x, y) in act.data().iter().zip(va.value().data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in lp.data().iter().zip(vlp.value().data()) {
            assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn actions_stay_inside_the_open_box() {
        let a = actor(2);
        let o = obs(64, 2);
        let eps = a.noise(64, &mut stream(2, 1)).scaled(50.0);
        let (act, lp) = a.sample_with_noise(&o, &eps).unwrap();
        assert!(act.data().iter().all(|x| x.abs() <= 1.0));
        assert!(lp.is_finite());
    }

    #[test]
    fn log_prob_matches_change_of_variables() {
        // One dimension, mean 0.3, log_std -0.5: density of tanh(u) by numeric
        // differentiation of the inverse map.
        let tape = Tape::new();
        let out = tape.constant(Tensor::from_rows(&[vec![0.3, -0.5]]));
        let e = 0.7;
        let (act, lp) = squash(out, tape.constant(Tensor::from_rows(&[vec![e]])), 1).unwrap();
        let a: f64 = act.value().item();
        let std = (-0.5f64).exp();
        let density_u =
            |u: f64| (-(u - 0.3).powi(2) / (2.0 * std * std)).exp() / (std * (2.0 * std::f64::consts::PI).sqrt());
        let h = 1e-6;
        let du_da = (((a + h).atanh()) - ((a - h).atanh())) / (2.0 * h);
        let expected = (density_u(a.atanh()) * du_da).ln();
        assert!(
            (lp.value().item() - expected).abs() < 1e-6,
            "{} vs {expected}",
            lp.value().item()
        );
    }

    #[test]
    fn log_std_is_clamped() {
        let tape = Tape::new();
        let out = tape.constant(Tensor::from_rows(&[vec![0.0, 40.0]]));
        let (_, lp) = squash(out, tape.constant(Tensor::from_rows(&[vec![0.0]])), 1).unwrap();
        // u = 0 so the Jacobian term vanishes
        assert!((lp.value().item() - (-LOG_STD_MAX - HALF_LOG_TWO_PI)).abs() < 1e-12);
    }

    #[test]
    fn mean_action_is_tanh_of_mean() {
        let a = actor(3);
        let o = obs(5, 3);
        let raw = a.net.infer(&o).unwrap();
        let det = a.mean_action(&o).unwrap();
        for r in 0..5 {
            for j in 0..2 {
                assert_eq!(det.at(r, j), raw.at(r, j).tanh());
            }
        }
    }
}
