use crate::checkpoint::Checkpoint;
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// True termination only; time-limit truncation keeps bootstrapping.
    pub done: bool,
}

/// Column-stacked sample of transitions, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch<T> {
    pub obs: Tensor<T>,
    pub actions: Tensor<T>,
    /// `B x 1`.
    pub rewards: Tensor<T>,
    pub next_obs: Tensor<T>,
    /// `B x 1`, 1 for terminal transitions.
    pub dones: Tensor<T>,
}

impl<T: Real> TransitionBatch<T> {
    pub fn len(&self) -> usize {
        self.obs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_transitions(items: &[Transition]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::contract("empty transition batch"));
        }
        let n = items.len();
        let cast = |rows: Vec<f64>, cols: usize| Tensor::from_f64(&[n, cols], &rows);
        let od = items[0].obs.len();
        let ad = items[0].action.len();
        Ok(Self {
            obs: cast(items.iter().flat_map(|t| t.obs.iter().copied()).collect(), od)?,
            actions: cast(items.iter().flat_map(|t| t.action.iter().copied()).collect(), ad)?,
            rewards: cast(items.iter().map(|t| t.reward).collect(), 1)?,
            next_obs: cast(items.iter().flat_map(|t| t.next_obs.iter().copied()).collect(), od)?,
            dones: cast(items.iter().map(|t| f64::from(u8::from(t.done))).collect(), 1)?,
        })
    }
}

/// Fixed-capacity FIFO ring of transitions with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    /// 1.0 for terminal transitions.
    dones: Vec<f64>,
    /// Total insertions; the write slot is `inserted % capacity`.
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            obs_dim,
            action_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim || t.action.len() != self.action_dim {
            return Err(Error::contract(format!(
                "transition dims obs {}/{} action {} do not match buffer ({}, {})",
                t.obs.len(),
                t.next_obs.len(),
                t.action.len(),
                self.obs_dim,
                self.action_dim
            )));
        }
        if !t.reward.is_finite() {
            return Err(Error::non_finite("transition reward"));
        }
        if t.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::contract(format!("action {:?} outside [-1, 1]", t.action)));
        }
        let slot = (self.inserted % self.capacity as u64) as usize;
        if self.len() < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.dones.push(f64::from(u8::from(t.done)));
        } else {
            let (o, a) = (slot * self.obs_dim, slot * self.action_dim);
            self.obs[o..o + self.obs_dim].copy_from_slice(&t.obs);
            self.actions[a..a + self.action_dim].copy_from_slice(&t.action);
            self.rewards[slot] = t.reward;
            self.next_obs[o..o + self.obs_dim].copy_from_slice(&t.next_obs);
            self.dones[slot] = f64::from(u8::from(t.done));
        }
        self.inserted += 1;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Transition {
        let (o, a) = (i * self.obs_dim, i * self.action_dim);
        Transition {
            obs: self.obs[o..o + self.obs_dim].to_vec(),
            action: self.actions[a..a + self.action_dim].to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs[o..o + self.obs_dim].to_vec(),
            done: self.dones[i] != 0.0,
        }
    }

    /// Slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::contract("sampling from an empty replay buffer"));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len())).collect())
    }

    pub fn sample<T: Real, R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<TransitionBatch<T>> {
        let idx = self.sample_indices(n, rng)?;
        let gather = |src: &[f64], width: usize| -> Result<Tensor<T>> {
            let data = idx
                .iter()
                .flat_map(|&i| src[i * width..(i + 1) * width].iter().map(|&x| T::from_f64_lossy(x)))
                .collect();
            Ok(Tensor::from_vec(&[n, width], data)?)
        };
        Ok(TransitionBatch {
            obs: gather(&self.obs, self.obs_dim)?,
            actions: gather(&self.actions, self.action_dim)?,
            rewards: gather(&self.rewards, 1)?,
            next_obs: gather(&self.next_obs, self.obs_dim)?,
            dones: gather(&self.dones, 1)?,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_raw(
            "meta",
            &[4],
            vec![
                self.capacity as f64,
                self.obs_dim as f64,
                self.action_dim as f64,
                self.inserted as f64,
            ],
        );
        if !self.is_empty() {
            let n = self.len();
            ck.push_raw("obs", &[n, self.obs_dim], self.obs.clone());
            ck.push_raw("actions", &[n, self.action_dim], self.actions.clone());
            ck.push_raw("rewards", &[n], self.rewards.clone());
            ck.push_raw("next_obs", &[n, self.obs_dim], self.next_obs.clone());
            ck.push_raw("dones", &[n], self.dones.clone());
        }
        ck
    }

    pub fn restore(ck: &Checkpoint) -> Result<Self> {
        let meta = ck
            .get("meta")
            .ok_or_else(|| Error::Checkpoint("replay buffer metadata missing".into()))?;
        let [capacity, obs_dim, action_dim, inserted] = meta.data[..] else {
            return Err(Error::Checkpoint("malformed replay buffer metadata".into()));
        };
        let mut buf = Self::new(capacity as usize, obs_dim as usize, action_dim as usize);
        buf.inserted = inserted as u64;
        if let Some(r) = ck.get("rewards") {
            let field = |name: &str| {
                ck.get(name)
                    .map(|r| r.data.clone())
                    .ok_or_else(|| Error::Checkpoint(format!("replay buffer `{name}` missing")))
            };
            buf.rewards = r.data.clone();
            buf.obs = field("obs")?;
            buf.actions = field("actions")?;
            buf.next_obs = field("next_obs")?;
            buf.dones = field("dones")?;
        }
        Ok(buf)
    }
}
