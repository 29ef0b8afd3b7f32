//! Central finite-difference oracles shared by the gradient suites.
#![allow(dead_code)]

use crossq::nn::{Activation, BnMode, Mlp};
use crossq::rl::{actor_loss, crossq_critic_loss, sac_critic_loss, temperature_loss, Actor, CriticInputs, CriticPair};
use crossq::rng::{stream, Rng};
use crossq::tensor::{Tape, Tensor, Var};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub const H: f64 = 1e-5;
pub const REL: f64 = 1e-4;

/// Worst mismatch between analytic and numeric gradients.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl Report {
    fn add(&mut self, analytic: f64, numeric: f64, floor: f64, at: impl FnOnce() -> String) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.checked += 1;
        if err > self.worst {
            self.worst = err;
            self.worst_at = format!("{} (analytic {analytic:e}, numeric {numeric:e})", at());
        }
    }

    pub fn passes(&self) -> bool {
        self.checked > 0 && self.worst <= REL
    }
}

/// Denominator floor for entries whose true gradient is zero: finite
/// differences only resolve them to about `1e-6` of the largest gradient.
fn floor_for(grads: impl Iterator<Item = f64>) -> f64 {
    1e-6 * grads.map(f64::abs).fold(1e-12, f64::max)
}

pub fn gaussian(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub type Build<'a> = dyn for<'t> Fn(&[Var<'t, f64>]) -> Var<'t, f64> + 'a;

/// Pins a closure to the higher-ranked signature of [`Build`].
pub fn build<F: for<'t> Fn(&[Var<'t, f64>]) -> Var<'t, f64>>(f: F) -> F {
    f
}

/// Checks `d sum(f(inputs) * probe) / d inputs` for a fixed random probe.
#[allow(clippy::needless_range_loop)]
pub fn check_op(inputs: &[Tensor<f64>], f: &Build<'_>, rng: &mut Rng) -> Report {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&vars);
    let probe = gaussian(&out.shape(), rng);
    tape.backward(out.mul(tape.constant(probe.clone())).unwrap().sum())
        .unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| v.grad().map_or_else(|| vec![0.0; v.value().numel()], Tensor::into_data))
        .collect();

    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&vars).value();
        out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    let floor = floor_for(analytic.iter().flatten().copied());
    let mut report = Report::default();
    let mut xs = inputs.to_vec();
    for i in 0..xs.len() {
        for e in 0..xs[i].numel() {
            let x0 = xs[i].data()[e];
            xs[i].data_mut()[e] = x0 + H;
            let up = eval(&xs);
            xs[i].data_mut()[e] = x0 - H;
            let down = eval(&xs);
            xs[i].data_mut()[e] = x0;
            report.add(analytic[i][e], (up - down) / (2.0 * H), floor, || {
                format!("input {i}[{e}]")
            });
        }
    }
    report
}

/// Checks analytic gradients of every parameter of `nets` against central
/// differences of `loss`.
pub fn check_nets(nets: &mut [Mlp<f64>], analytic: &[Vec<Tensor<f64>>], loss: &dyn Fn(&[Mlp<f64>]) -> f64) -> Report {
    let floor = floor_for(analytic.iter().flatten().flat_map(|t| t.data().to_vec()));
    let mut report = Report::default();
    for j in 0..nets.len() {
        let names = nets[j].param_names();
        for (p, name) in names.iter().enumerate() {
            let n = nets[j].params_mut()[p].numel();
            for e in 0..n {
                let x0 = nets[j].params_mut()[p].data()[e];
                nets[j].params_mut()[p].data_mut()[e] = x0 + H;
                let up = loss(nets);
                nets[j].params_mut()[p].data_mut()[e] = x0 - H;
                let down = loss(nets);
                nets[j].params_mut()[p].data_mut()[e] = x0;
                report.add(analytic[j][p].data()[e], (up - down) / (2.0 * H), floor, || {
                    format!("net {j} {name}[{e}]")
                });
            }
        }
    }
    report
}

pub const OBS: usize = 3;
pub const ACT: usize = 2;

pub struct Batch {
    pub obs: Tensor<f64>,
    pub actions: Tensor<f64>,
    pub rewards: Tensor<f64>,
    pub dones: Tensor<f64>,
    pub next_obs: Tensor<f64>,
    pub next_actions: Tensor<f64>,
    pub next_log_probs: Tensor<f64>,
}

impl Batch {
    pub fn random(b: usize, rng: &mut Rng) -> Self {
        let dones = (0..b).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        Self {
            obs: gaussian(&[b, OBS], rng),
            actions: uniform(&[b, ACT], -0.99, 0.99, rng),
            rewards: gaussian(&[b, 1], rng),
            dones: Tensor::from_vec(&[b, 1], dones).unwrap(),
            next_obs: gaussian(&[b, OBS], rng),
            next_actions: uniform(&[b, ACT], -0.99, 0.99, rng),
            next_log_probs: gaussian(&[b, 1], rng),
        }
    }

    pub fn vars<'t>(&self, tape: &'t Tape<f64>) -> CriticInputs<'t, f64> {
        CriticInputs {
            obs: tape.constant(self.obs.clone()),
            actions: tape.constant(self.actions.clone()),
            rewards: tape.constant(self.rewards.clone()),
            dones: tape.constant(self.dones.clone()),
            next_obs: tape.constant(self.next_obs.clone()),
            next_actions: tape.constant(self.next_actions.clone()),
            next_log_probs: tape.constant(self.next_log_probs.clone()),
        }
    }
}

const GAMMA: f64 = 0.99;
const ALPHA: f64 = 0.3;

/// Composite losses are checked with a smooth activation: under joint-batch
/// normalisation one weight perturbation moves every pre-activation, and a
/// ReLU kink inside the stencil spoils the central difference.
const SMOOTH: Activation = Activation::Tanh;

fn critics(batchnorm: bool, weight_norm: bool, hidden: &[usize], rng: &mut Rng) -> Vec<Mlp<f64>> {
    let spec = CriticPair::<f64>::spec(OBS, ACT, hidden, SMOOTH, batchnorm, weight_norm);
    let pair = CriticPair::<f64>::init(&spec, false, rng).unwrap();
    pair.q.to_vec()
}

/// Joint-batch critic loss. The bootstrap target is detached, so the numeric
/// side holds it at its unperturbed value while batch statistics still see
/// the perturbation through the next-state rows.
pub fn crossq_critic(seed: u64, weight_norm: bool) -> Report {
    let mut rng = stream(seed, 0);
    let mut nets = critics(true, weight_norm, &[32, 32], &mut rng);
    let batch = Batch::random(8, &mut rng);
    let q_of = |nets: &[Mlp<f64>], trainable: bool, y: Option<&[f64]>| {
        let tape = Tape::new();
        let c = [nets[0].bind(&tape, trainable), nets[1].bind(&tape, trainable)];
        let l = crossq_critic_loss([&c[0], &c[1]], &batch.vars(&tape), GAMMA, ALPHA).unwrap();
        let y0 = l.target.value().into_data();
        let y = y.unwrap_or(&y0);
        let manual: f64 =
            l.q.iter()
                .map(|q| {
                    let q = q.value().into_data();
                    q.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / q.len() as f64
                })
                .sum();
        let grads = if trainable {
            tape.backward(l.loss).unwrap();
            vec![c[0].grads(), c[1].grads()]
        } else {
            vec![]
        };
        (l.loss.value().item(), manual, y0, grads)
    };
    let (value, manual, y0, grads) = q_of(&nets, true, None);
    assert!((value - manual).abs() <= 1e-12 * value.abs().max(1.0));
    check_nets(&mut nets, &grads, &|n| q_of(n, false, Some(&y0)).1)
}

pub fn sac_critic(seed: u64) -> Report {
    let mut rng = stream(seed, 1);
    let mut nets = critics(false, false, &[32, 32], &mut rng);
    let targets = critics(false, false, &[32, 32], &mut rng);
    let batch = Batch::random(8, &mut rng);
    let run = |nets: &[Mlp<f64>], trainable: bool| {
        let tape = Tape::new();
        let c = [nets[0].bind(&tape, trainable), nets[1].bind(&tape, trainable)];
        let t = [targets[0].bind(&tape, false), targets[1].bind(&tape, false)];
        let l = sac_critic_loss([&c[0], &c[1]], [&t[0], &t[1]], &batch.vars(&tape), GAMMA, ALPHA).unwrap();
        let grads = if trainable {
            tape.backward(l.loss).unwrap();
            vec![c[0].grads(), c[1].grads()]
        } else {
            vec![]
        };
        (l.loss.value().item(), grads)
    };
    let (_, grads) = run(&nets, true);
    check_nets(&mut nets, &grads, &|n| run(n, false).0)
}

pub fn actor(seed: u64, critic_mode: BnMode) -> Report {
    let mut rng = stream(seed, 2);
    let a = Actor::<f64>::init(OBS, ACT, &[16, 16], SMOOTH, &mut rng).unwrap();
    let critics = critics(true, true, &[16, 16], &mut rng);
    let obs = gaussian(&[8, OBS], &mut rng);
    let eps = a.noise(8, &mut rng);
    let run = |nets: &[Mlp<f64>], trainable: bool| {
        let tape = Tape::new();
        let b = nets[0].bind(&tape, trainable);
        let c = [critics[0].bind(&tape, false), critics[1].bind(&tape, false)];
        let (loss, _) = actor_loss(
            &b,
            [&c[0], &c[1]],
            tape.constant(obs.clone()),
            tape.constant(eps.clone()),
            ACT,
            ALPHA,
            critic_mode,
        )
        .unwrap();
        let grads = if trainable {
            tape.backward(loss).unwrap();
            vec![b.grads()]
        } else {
            vec![]
        };
        (loss.value().item(), grads)
    };
    let mut nets = vec![a.net.clone()];
    let (_, grads) = run(&nets, true);
    check_nets(&mut nets, &grads, &|n| run(n, false).0)
}

pub fn temperature(seed: u64) -> Report {
    let mut rng = stream(seed, 3);
    let log_alpha = gaussian(&[1], &mut rng);
    let log_probs = gaussian(&[16, 1], &mut rng);
    let f = build(move |v| {
        let lp = v[0].tape().constant(log_probs.clone());
        temperature_loss(v[0], lp, -(ACT as f64)).unwrap()
    });
    check_op(&[log_alpha], &f, &mut rng)
}
