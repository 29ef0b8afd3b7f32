use crate::checkpoint::Checkpoint;
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created on the first update.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `names` label parameters in error messages.
    ///
    /// Gradients are validated before anything is written, so a failed
    /// update leaves parameters and moments untouched.
    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], names: &[String]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(format!(
                "adam got {} parameters and {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::contract(format!(
                    "gradient shape {:?} does not match parameter {} {:?}",
                    g.shape(),
                    names.get(i).map_or("?", String::as_str),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::non_finite(format!("gradient of {name}")));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len() {
            return Err(Error::contract("adam parameter list changed between steps"));
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(c.lr / bc1);
        let root_bc2 = T::from_f64_lossy(bc2.sqrt());
        let eps = T::from_f64_lossy(c.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *x -= step_size * *mi / (vi.sqrt() / root_bc2 + eps);
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_scalar("step", self.step as f64);
        for (i, (m, v)) in self.first.iter().zip(&self.second).enumerate() {
            ck.push_raw(format!("m.{i}"), &[m.len()], m.iter().map(|x| x.as_f64()).collect());
            ck.push_raw(format!("v.{i}"), &[v.len()], v.iter().map(|x| x.as_f64()).collect());
        }
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        self.step = ck.scalar("step")? as u64;
        self.first.clear();
        self.second.clear();
        for i in 0.. {
            let (Some(m), Some(v)) = (ck.get(&format!("m.{i}")), ck.get(&format!("v.{i}"))) else {
                break;
            };
            self.first.push(m.data.iter().map(|&x| T::from_f64_lossy(x)).collect());
            self.second.push(v.data.iter().map(|&x| T::from_f64_lossy(x)).collect());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1], vec![x]).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        let mut p = scalar(0.0);
        adam.update(&mut [&mut p], &[scalar(1.0)], &["p".into()]).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-8);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        let mut p = scalar(1.25);
        for _ in 0..100 {
            adam.update(&mut [&mut p], &[scalar(0.0)], &["p".into()]).unwrap();
        }
        assert_eq!(p.data()[0], 1.25);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = scalar(1.0);
        let err = adam
            .update(&mut [&mut p], &[scalar(f64::NAN)], &["critic.linear0.weight".into()])
            .unwrap_err();
        assert!(err.to_string().contains("critic.linear0.weight"));
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn state_round_trips_through_checkpoint() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = scalar(1.0);
        adam.update(&mut [&mut p], &[scalar(0.3)], &["p".into()]).unwrap();
        let mut copy = Adam::<f64>::new(AdamConfig::default());
        copy.restore(&adam.checkpoint()).unwrap();
        assert_eq!(copy, adam);
    }
}
