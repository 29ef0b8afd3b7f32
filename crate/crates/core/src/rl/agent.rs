use rand::Rng as _;

use crate::checkpoint::Checkpoint;
use crate::envs::Policy;
use crate::nn::{Adam, AdamConfig, BnMode};
use crate::rng::{self, streams, Rng, RngState};
use crate::tensor::{Real, Tape, Tensor};
use crate::{Error, Result};

use super::critic::{actor_loss, crossq_critic_loss, sac_critic_loss, temperature_loss, CriticInputs};
use super::{Actor, AgentConfig, CriticPair, ReplayBuffer, Transition, Variant};

/// Most recent loss values; NaN until the corresponding update has run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    /// Mean `-log_pi` of the last actor batch.
    pub entropy: f64,
}

impl Default for UpdateStats {
    fn default() -> Self {
        Self {
            critic_loss: f64::NAN,
            actor_loss: f64::NAN,
            alpha_loss: f64::NAN,
            entropy: f64::NAN,
        }
    }
}

/// Updates performed by one [`Agent::train_step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepUpdates {
    pub critic: usize,
    pub actor: usize,
}

/// One learning agent with its replay buffer and random streams.
#[derive(Debug, Clone)]
pub struct Agent<T: Real> {
    pub config: AgentConfig,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub actor: Actor<T>,
    pub critics: CriticPair<T>,
    /// `log alpha`, shape `[1]`.
    pub log_alpha: Tensor<T>,
    actor_opt: Adam<T>,
    critic_opts: [Adam<T>; 2],
    alpha_opt: Adam<T>,
    pub buffer: ReplayBuffer,
    seed: u64,
    rng: Rng,
    replay_rng: Rng,
    pub critic_updates: u64,
    pub actor_updates: u64,
    /// Parameter initialisations drawn so far.
    pub inits: u64,
    pub last: UpdateStats,
}

struct Fresh<T> {
    actor: Actor<T>,
    critics: CriticPair<T>,
    log_alpha: Tensor<T>,
    actor_opt: Adam<T>,
    critic_opts: [Adam<T>; 2],
    alpha_opt: Adam<T>,
}

fn fresh<T: Real>(config: &AgentConfig, obs_dim: usize, action_dim: usize, seed: u64, draw: u64) -> Result<Fresh<T>> {
    let mut rng = rng::stream(seed, streams::INIT_BASE + draw);
    let actor = Actor::init(obs_dim, action_dim, &config.actor_hidden, config.activation, &mut rng)?;
    let mut spec = CriticPair::<T>::spec(
        obs_dim,
        action_dim,
        &config.critic_hidden,
        config.activation,
        config.variant.critic_batchnorm(),
        config.variant.critic_weight_norm(),
    );
    spec.bn_momentum = config.bn_momentum;
    spec.bn_eps = config.bn_eps;
    let critics = CriticPair::init(&spec, config.variant.uses_targets(), &mut rng)?;
    Ok(Fresh {
        actor,
        critics,
        log_alpha: Tensor::from_vec(&[1], vec![T::from_f64_lossy(config.initial_alpha.ln())])?,
        actor_opt: Adam::new(AdamConfig::with_lr(config.actor_lr)),
        critic_opts: [
            Adam::new(AdamConfig::with_lr(config.critic_lr)),
            Adam::new(AdamConfig::with_lr(config.critic_lr)),
        ],
        alpha_opt: Adam::new(AdamConfig::with_lr(config.alpha_lr)),
    })
}

impl<T: Real> Agent<T> {
    pub fn new(config: AgentConfig, obs_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        let issues = config.issues();
        if !issues.is_empty() {
            return Err(Error::Config(issues));
        }
        let f = fresh(&config, obs_dim, action_dim, seed, 0)?;
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity, obs_dim, action_dim),
            config,
            obs_dim,
            action_dim,
            actor: f.actor,
            critics: f.critics,
            log_alpha: f.log_alpha,
            actor_opt: f.actor_opt,
            critic_opts: f.critic_opts,
            alpha_opt: f.alpha_opt,
            seed,
            rng: rng::stream(seed, streams::AGENT),
            replay_rng: rng::stream(seed, streams::REPLAY),
            critic_updates: 0,
            actor_updates: 0,
            inits: 1,
            last: UpdateStats::default(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.data()[0].as_f64().exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    pub fn warmed_up(&self) -> bool {
        self.buffer.len() >= self.config.warmup
    }

    fn obs_tensor(&self, obs: &[f64]) -> Result<Tensor<T>> {
        if obs.len() != self.obs_dim {
            return Err(Error::contract(format!(
                "observation has {} entries, expected {}",
                obs.len(),
                self.obs_dim
            )));
        }
        Ok(Tensor::from_f64(&[1, self.obs_dim], obs)?)
    }

    /// Behaviour action: uniform during warmup, then a policy sample.
    pub fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        if !self.warmed_up() {
            return Ok((0..self.action_dim).map(|_| self.rng.random_range(-1.0..1.0)).collect());
        }
        let x = self.obs_tensor(obs)?;
        let eps = self.actor.noise(1, &mut self.rng);
        let (a, _) = self.actor.sample_with_noise(&x, &eps)?;
        Ok(a.to_f64_vec())
    }

    /// Deterministic evaluation action `tanh(mean)`.
    pub fn act_greedy(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.actor.mean_action(&self.obs_tensor(obs)?)?.to_f64_vec())
    }

    /// Stores a transition, then once warmed up runs `utd` critic updates and
    /// `actor_utd` actor and temperature updates.
    pub fn train_step(&mut self, t: &Transition) -> Result<StepUpdates> {
        self.buffer.push(t)?;
        if !self.warmed_up() {
            return Ok(StepUpdates::default());
        }
        for _ in 0..self.config.utd {
            self.critic_update()?;
        }
        for _ in 0..self.config.actor_utd {
            self.actor_update()?;
        }
        Ok(StepUpdates {
            critic: self.config.utd,
            actor: self.config.actor_utd,
        })
    }

    pub fn critic_update(&mut self) -> Result<f64> {
        let b = self.config.batch_size;
        let batch = self.buffer.sample::<T, _>(b, &mut self.replay_rng)?;
        let eps = self.actor.noise(b, &mut self.rng);
        let (next_actions, next_log_probs) = self.actor.sample_with_noise(&batch.next_obs, &eps)?;
        let gamma = T::from_f64_lossy(self.config.gamma);
        let alpha = T::from_f64_lossy(self.alpha());

        let tape = Tape::new();
        let c = [self.critics.q[0].bind(&tape, true), self.critics.q[1].bind(&tape, true)];
        let inp = CriticInputs {
            obs: tape.constant(batch.obs),
            actions: tape.constant(batch.actions),
            rewards: tape.constant(batch.rewards),
            dones: tape.constant(batch.dones),
            next_obs: tape.constant(batch.next_obs),
            next_actions: tape.constant(next_actions),
            next_log_probs: tape.constant(next_log_probs),
        };
        let loss = match (&self.config.variant, &self.critics.targets) {
            (Variant::Sac, Some(targets)) => {
                let t = [targets[0].bind(&tape, false), targets[1].bind(&tape, false)];
                sac_critic_loss([&c[0], &c[1]], [&t[0], &t[1]], &inp, gamma, alpha)?
            }
            (Variant::Sac, None) => return Err(Error::contract("sac critics without target networks")),
            _ => crossq_critic_loss([&c[0], &c[1]], &inp, gamma, alpha)?,
        };
        let value = loss.loss.value().item().as_f64();
        if !value.is_finite() {
            return Err(Error::non_finite(format!(
                "critic loss at update {}",
                self.critic_updates + 1
            )));
        }
        tape.backward(loss.loss)?;
        for (i, bound) in c.iter().enumerate() {
            let grads = bound.grads();
            self.critics.q[i].adam_step(&mut self.critic_opts[i], &grads)?;
            self.critics.q[i].commit_stats(&loss.stats[i])?;
        }
        if self.config.variant.uses_targets() {
            self.critics.polyak(self.config.tau)?;
        }
        self.critic_updates += 1;
        self.last.critic_loss = value;
        Ok(value)
    }

    /// One actor step followed by one temperature step on the same sample.
    pub fn actor_update(&mut self) -> Result<f64> {
        let b = self.config.batch_size;
        let batch = self.buffer.sample::<T, _>(b, &mut self.replay_rng)?;
        let eps = self.actor.noise(b, &mut self.rng);
        let alpha = T::from_f64_lossy(self.alpha());
        let mode = if self.config.actor_bn_train {
            BnMode::Train
        } else {
            BnMode::Eval
        };

        let tape = Tape::new();
        let a = self.actor.net.bind(&tape, true);
        let c = [
            self.critics.q[0].bind(&tape, false),
            self.critics.q[1].bind(&tape, false),
        ];
        let (loss, log_probs) = actor_loss(
            &a,
            [&c[0], &c[1]],
            tape.constant(batch.obs),
            tape.constant(eps),
            self.action_dim,
            alpha,
            mode,
        )?;
        let value = loss.value().item().as_f64();
        if !value.is_finite() {
            return Err(Error::non_finite(format!(
                "actor loss at update {}",
                self.actor_updates + 1
            )));
        }
        tape.backward(loss)?;
        self.actor.net.adam_step(&mut self.actor_opt, &a.grads())?;
        let log_probs = log_probs.value();

        let tape = Tape::new();
        let log_alpha = tape.param(self.log_alpha.clone());
        let target = T::from_f64_lossy(self.target_entropy());
        let alpha_loss = temperature_loss(log_alpha, tape.constant(log_probs.clone()), target)?;
        tape.backward(alpha_loss)?;
        let grad = log_alpha.grad().expect("log alpha is a parameter");
        self.alpha_opt
            .update(&mut [&mut self.log_alpha], &[grad], &["log_alpha".to_string()])?;

        self.actor_updates += 1;
        self.last.actor_loss = value;
        self.last.alpha_loss = alpha_loss.value().item().as_f64();
        self.last.entropy = -log_probs.sum().as_f64() / b as f64;
        Ok(value)
    }

    /// Re-draws every network, the temperature and all optimiser state from
    /// the next initialisation stream. The replay buffer is kept.
    pub fn reset_networks(&mut self) -> Result<()> {
        let f = fresh(&self.config, self.obs_dim, self.action_dim, self.seed, self.inits)?;
        self.inits += 1;
        self.actor = f.actor;
        self.critics = f.critics;
        self.log_alpha = f.log_alpha;
        self.actor_opt = f.actor_opt;
        self.critic_opts = f.critic_opts;
        self.alpha_opt = f.alpha_opt;
        Ok(())
    }

    /// Resets when `env_step` is a positive multiple of the reset interval.
    pub fn periodic_reset(&mut self, env_step: u64) -> Result<bool> {
        match self.config.reset_interval {
            Some(k) if env_step > 0 && env_step.is_multiple_of(k) => {
                self.reset_networks()?;
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    /// Network parameters, batch-norm statistics and temperature only.
    pub fn param_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.extend("actor.", self.actor.net.checkpoint());
        ck.extend("critic.", self.critics.checkpoint());
        ck.push("log_alpha", &self.log_alpha);
        ck
    }

    /// Everything needed to continue training bit for bit.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.param_checkpoint();
        ck.extend("opt.actor.", self.actor_opt.checkpoint());
        ck.extend("opt.critic0.", self.critic_opts[0].checkpoint());
        ck.extend("opt.critic1.", self.critic_opts[1].checkpoint());
        ck.extend("opt.alpha.", self.alpha_opt.checkpoint());
        ck.extend("buffer.", self.buffer.checkpoint());
        ck.push_raw(
            "counters",
            &[3],
            vec![self.critic_updates as f64, self.actor_updates as f64, self.inits as f64],
        );
        ck.push_raw("rng.agent", &[38], RngState::capture(&self.rng).to_words());
        ck.push_raw("rng.replay", &[38], RngState::capture(&self.replay_rng).to_words());
        let l = self.last;
        ck.push_raw("last", &[4], vec![l.critic_loss, l.actor_loss, l.alpha_loss, l.entropy]);
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let words = |name: &str| -> Result<Vec<f64>> {
            ck.get(name)
                .map(|r| r.data.clone())
                .ok_or_else(|| Error::Checkpoint(format!("`{name}` missing")))
        };
        let rng_from = |name: &str| -> Result<Rng> {
            RngState::from_words(&words(name)?)
                .map(|s| s.restore())
                .ok_or_else(|| Error::Checkpoint(format!("`{name}` is not a valid stream position")))
        };
        let counters = words("counters")?;
        let last = words("last")?;
        if counters.len() != 3 || last.len() != 4 {
            return Err(Error::Checkpoint("malformed agent counters".into()));
        }
        // draw the network shapes that were live when the checkpoint was taken
        let mut f = fresh::<T>(&self.config, self.obs_dim, self.action_dim, self.seed, 0)?;
        f.actor.net.restore(&ck.section("actor."))?;
        f.critics.restore(&ck.section("critic."))?;
        f.actor_opt.restore(&ck.section("opt.actor."))?;
        f.critic_opts[0].restore(&ck.section("opt.critic0."))?;
        f.critic_opts[1].restore(&ck.section("opt.critic1."))?;
        f.alpha_opt.restore(&ck.section("opt.alpha."))?;
        let log_alpha = ck.tensor::<T>("log_alpha")?;
        let buffer = ReplayBuffer::restore(&ck.section("buffer."))?;
        let (rng, replay_rng) = (rng_from("rng.agent")?, rng_from("rng.replay")?);

        self.actor = f.actor;
        self.critics = f.critics;
        self.actor_opt = f.actor_opt;
        self.critic_opts = f.critic_opts;
        self.alpha_opt = f.alpha_opt;
        self.log_alpha = log_alpha;
        self.buffer = buffer;
        self.rng = rng;
        self.replay_rng = replay_rng;
        self.critic_updates = counters[0] as u64;
        self.actor_updates = counters[1] as u64;
        self.inits = counters[2] as u64;
        self.last = UpdateStats {
            critic_loss: last[0],
            actor_loss: last[1],
            alpha_loss: last[2],
            entropy: last[3],
        };
        Ok(())
    }
}

/// The agent's current stochastic policy, drawing noise from the caller's
/// per-row streams.
pub struct SamplingPolicy<'a, T: Real>(pub &'a Actor<T>);

impl<T: Real> Policy for SamplingPolicy<'_, T> {
    fn act(&self, obs: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mut rngs = [rng];
        self.act_batch(&[obs.to_vec()], &mut rngs).pop().expect("one row")
    }

    fn act_batch(&self, obs: &[Vec<f64>], rngs: &mut [&mut Rng]) -> Vec<Vec<f64>> {
        let rows = obs.len();
        let d = self.0.obs_dim();
        let flat: Vec<f64> = obs.iter().flatten().copied().collect();
        let x = Tensor::from_f64(&[rows, d], &flat).expect("observation batch");
        let mut noise = Vec::with_capacity(rows * self.0.action_dim);
        for rng in rngs.iter_mut() {
            noise.extend(self.0.noise(1, &mut **rng).into_data());
        }
        let eps = Tensor::from_vec(&[rows, self.0.action_dim], noise).expect("noise batch");
        let (a, _) = self.0.sample_with_noise(&x, &eps).expect("policy sample");
        let m = self.0.action_dim;
        a.to_f64_vec().chunks(m).map(<[f64]>::to_vec).collect()
    }
}
