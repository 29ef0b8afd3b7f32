use crate::tensor::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

use super::BnMode;

pub const DEFAULT_MOMENTUM: f64 = 0.01;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Batch normalisation over the leading (batch) axis.
///
/// Running statistics follow `running <- (1 - momentum) * running + momentum * batch`
/// with the biased batch variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

/// Mean and biased variance of one training-mode batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(features: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: Tensor::ones(&[features]),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::ones(&[features]),
            momentum,
            eps,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.numel()
    }

    pub fn commit(&mut self, stats: &BatchStats<T>) {
        let m = T::from_f64_lossy(self.momentum);
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (keep * *r + m * b).max(T::zero());
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundBatchNorm<'t, T> {
        BoundBatchNorm {
            gamma: tape.leaf(self.gamma.clone(), trainable),
            beta: tape.leaf(self.beta.clone(), trainable),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
            eps: self.eps,
        }
    }

    /// Normalises `x` (`B x d`). Train mode also advances the running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let (y, stats) = bound.forward(tape.constant(x.clone()), mode)?;
        if let Some(stats) = stats {
            self.commit(&stats);
        }
        Ok(y.value())
    }

    /// Eval-mode normalisation of row-major `data` without a tape.
    pub(crate) fn infer_rows(&self, data: &mut [T]) {
        let eps = T::from_f64_lossy(self.eps);
        let d = self.features();
        let (g, b) = (self.gamma.data(), self.beta.data());
        let rm = self.running_mean.data();
        let inv_std: Vec<T> = self
            .running_var
            .data()
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        for row in data.chunks_exact_mut(d) {
            for ((((x, &m), &s), &g), &b) in row.iter_mut().zip(rm).zip(&inv_std).zip(g).zip(b) {
                *x = (*x - m) * s * g + b;
            }
        }
    }
}

pub struct BoundBatchNorm<'t, T: Real> {
    pub gamma: Var<'t, T>,
    pub beta: Var<'t, T>,
    running_mean: Tensor<T>,
    running_var: Tensor<T>,
    eps: f64,
}

impl<'t, T: Real> BoundBatchNorm<'t, T> {
    pub fn forward(&self, x: Var<'t, T>, mode: BnMode) -> Result<(Var<'t, T>, Option<BatchStats<T>>)> {
        let (batch, features, finite) = x.with_value(|v| v.dims2().map(|(b, f)| (b, f, v.is_finite())))?;
        if features != self.running_mean.numel() {
            return Err(Error::contract(format!(
                "batchnorm expects {} features, got {features}",
                self.running_mean.numel()
            )));
        }
        if !finite {
            return Err(Error::non_finite("batchnorm input"));
        }
        let eps = T::from_f64_lossy(self.eps);
        match mode {
            BnMode::Train => {
                if batch < 2 {
                    return Err(Error::contract(format!(
                        "train-mode batchnorm needs at least 2 rows, got {batch}"
                    )));
                }
                let (y, mean, var) = x.batch_norm(self.gamma, self.beta, eps, None)?;
                Ok((y, Some(BatchStats { mean, var })))
            }
            BnMode::Eval => {
                let stats = (self.running_mean.data(), self.running_var.data());
                let (y, _, _) = x.batch_norm(self.gamma, self.beta, eps, Some(stats))?;
                Ok((y, None))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn normalised_batch_passes_through() {
        // zero mean, unit biased variance per column
        let x = Tensor::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let mut bn = BatchNorm::<f64>::new(2, DEFAULT_MOMENTUM, DEFAULT_EPS);
        let y = bn.forward(&x, BnMode::Train).unwrap();
        let distortion = 1.0 - 1.0 / (1.0 + DEFAULT_EPS).sqrt();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= distortion * a.abs() + 1e-12, "{a} vs {b}");
        }
        let mut tight = BatchNorm::<f64>::new(2, DEFAULT_MOMENTUM, 1e-7);
        let y = tight.forward(&x, BnMode::Train).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn constant_batch_maps_to_beta() {
        let x = Tensor::from_rows(&[vec![3.0], vec![3.0], vec![3.0]]);
        let mut bn = BatchNorm::<f64>::new(1, DEFAULT_MOMENTUM, DEFAULT_EPS);
        bn.beta = Tensor::from_vec(&[1], vec![5.0]).unwrap();
        let y = bn.forward(&x, BnMode::Train).unwrap();
        assert_eq!(y.data(), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn eval_mode_matches_hand_affine_map() {
        let mut bn = BatchNorm::<f64>::new(2, DEFAULT_MOMENTUM, DEFAULT_EPS);
        bn.running_mean = Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap();
        bn.running_var = Tensor::from_vec(&[2], vec![4.0, 0.25]).unwrap();
        bn.gamma = Tensor::from_vec(&[2], vec![2.0, -1.0]).unwrap();
        bn.beta = Tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.0], vec![0.5, -1.0]]);
        let y = bn.forward(&x, BnMode::Eval).unwrap();
        let expect = |v: f64, m: f64, s2: f64, g: f64, b: f64| (v - m) / (s2 + 1e-5).sqrt() * g + b;
        let oracle = [
            expect(1.0, 0.5, 4.0, 2.0, 0.1),
            expect(2.0, -1.0, 0.25, -1.0, 0.2),
            expect(-3.0, 0.5, 4.0, 2.0, 0.1),
            expect(0.0, -1.0, 0.25, -1.0, 0.2),
            expect(0.5, 0.5, 4.0, 2.0, 0.1),
            expect(-1.0, -1.0, 0.25, -1.0, 0.2),
        ];
        for (a, b) in y.data().iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        // eval mode does not move running statistics
        assert_eq!(bn.running_mean.data(), &[0.5, -1.0]);
    }

    #[test]
    fn train_mode_rejects_single_row_and_non_finite() {
        let mut bn = BatchNorm::<f64>::new(1, DEFAULT_MOMENTUM, DEFAULT_EPS);
        let one = Tensor::from_rows(&[vec![1.0]]);
        assert!(matches!(bn.forward(&one, BnMode::Train), Err(Error::Contract(_))));
        assert!(bn.forward(&one, BnMode::Eval).is_ok());
        let nan = Tensor::from_rows(&[vec![f64::NAN], vec![1.0]]);
        assert!(matches!(bn.forward(&nan, BnMode::Train), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn running_update_uses_momentum() {
        let mut bn = BatchNorm::<f64>::new(1, 0.1, DEFAULT_EPS);
        let x = Tensor::from_rows(&[vec![1.0], vec![3.0]]);
        bn.forward(&x, BnMode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn running_stats_converge_to_population() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dists = [Normal::new(3.0, 2.0).unwrap(), Normal::new(-1.0, 0.5).unwrap()];
        let mut bn = BatchNorm::<f64>::new(2, DEFAULT_MOMENTUM, DEFAULT_EPS);
        for _ in 0..1500 {
            let rows: Vec<Vec<f64>> = (0..2048)
                .map(|_| dists.iter().map(|d| d.sample(&mut rng)).collect())
                .collect();
            bn.forward(&Tensor::from_rows(&rows), BnMode::Train).unwrap();
        }
        let (m, v) = (bn.running_mean.data(), bn.running_var.data());
        // biased batch variance has expectation (n-1)/n * sigma^2
        let shrink = 2047.0 / 2048.0;
        assert!((m[0] - 3.0).abs() < 0.01 * 3.0);
        assert!((m[1] + 1.0).abs() < 0.01 * 1.0);
        assert!((v[0] - 4.0 * shrink).abs() < 0.01 * 4.0);
        assert!((v[1] - 0.25 * shrink).abs() < 0.01 * 0.25);
    }
}
