//! Off-policy actor-critic agents: SAC with target networks, CrossQ, and
//! CrossQ with weight-normalised critics.

mod actor;
mod agent;
mod buffer;
mod critic;

pub use actor::{sample_vars, squash, Actor, LOG_STD_MAX, LOG_STD_MIN};
pub use agent::{Agent, SamplingPolicy, StepUpdates, UpdateStats};
pub use buffer::{ReplayBuffer, Transition, TransitionBatch};
pub use critic::{
    actor_loss, crossq_critic_loss, sac_critic_loss, temperature_loss, CriticInputs, CriticLoss, CriticPair,
};

use std::fmt;
use std::str::FromStr;

use crate::nn::{Activation, DEFAULT_EPS, DEFAULT_MOMENTUM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Twin critics with Polyak-averaged targets, no batch norm.
    Sac,
    /// Batch-normalised critics, joint batch, no target networks.
    CrossQ,
    /// CrossQ with unit-norm rows in every hidden critic layer.
    CrossQWn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Sac, Variant::CrossQ, Variant::CrossQWn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sac => "sac",
            Variant::CrossQ => "crossq",
            Variant::CrossQWn => "crossq_wn",
        }
    }

    pub fn uses_targets(self) -> bool {
        self == Variant::Sac
    }

    pub fn critic_batchnorm(self) -> bool {
        self != Variant::Sac
    }

    pub fn critic_weight_norm(self) -> bool {
        self == Variant::CrossQWn
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected sac, crossq or crossq_wn)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub variant: Variant,
    /// Critic updates per environment step.
    pub utd: usize,
    /// Actor and temperature updates per environment step.
    pub actor_utd: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub batch_size: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub activation: Activation,
    /// Defaults to `-action_dim` when unset.
    pub target_entropy: Option<f64>,
    pub initial_alpha: f64,
    /// Polyak coefficient for target networks.
    pub tau: f64,
    pub reset_interval: Option<u64>,
    /// Uniform-random environment steps before the first update.
    pub warmup: usize,
    pub buffer_capacity: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Run critic batch norm in train mode inside the actor loss.
    pub actor_bn_train: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::CrossQWn,
            utd: 1,
            actor_utd: 1,
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            batch_size: 256,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![512, 512],
            activation: Activation::Relu,
            target_entropy: None,
            initial_alpha: 1.0,
            tau: 0.005,
            reset_interval: None,
            warmup: 1000,
            buffer_capacity: 1_000_000,
            bn_momentum: DEFAULT_MOMENTUM,
            bn_eps: DEFAULT_EPS,
            actor_bn_train: false,
        }
    }
}

impl AgentConfig {
    /// Every violated constraint, in a stable order.
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.utd < 1 {
            out.push("utd must be at least 1".to_string());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            out.push(format!("discount out of (0,1): {}", self.gamma));
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                out.push(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.batch_size < 2 {
            out.push(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            out.push("hidden widths must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            out.push(format!("tau out of [0,1]: {}", self.tau));
        }
        if !(self.initial_alpha > 0.0 && self.initial_alpha.is_finite()) {
            out.push(format!("initial_alpha must be positive, got {}", self.initial_alpha));
        }
        if self.reset_interval == Some(0) {
            out.push("reset_interval must be positive".to_string());
        }
        if self.buffer_capacity < self.batch_size.max(1) {
            out.push(format!(
                "buffer_capacity {} is smaller than batch_size {}",
                self.buffer_capacity, self.batch_size
            ));
        }
        if self.warmup < 1 {
            out.push("warmup must be at least 1 transition".to_string());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            out.push(format!("bn_momentum out of (0,1]: {}", self.bn_momentum));
        }
        if !(self.bn_eps > 0.0) {
            out.push(format!("bn_eps must be positive, got {}", self.bn_eps));
        }
        out
    }

    /// Non-fatal remarks.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.reset_interval.is_some() && self.variant != Variant::Sac {
            out.push(format!(
                "reset_interval with variant {} (periodic resets are the sac baseline's intervention)",
                self.variant
            ));
        }
        out
    }
}
