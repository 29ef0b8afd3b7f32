use rand::Rng;

use crate::tensor::{Real, Tensor};

/// Smallest row norm used as a divisor by [`Linear::wn_project`].
pub const WN_EPS: f64 = 1e-8;

/// Fully connected layer `y = x W^T + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub wn_enabled: bool,
}

impl<T: Real> Linear<T> {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialisation for weights and bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, wn_enabled: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect()
        };
        let weight = Tensor::from_vec(&[outputs, inputs], draw(outputs * inputs)).expect("positive widths");
        let bias = Tensor::from_vec(&[outputs], draw(outputs)).expect("positive widths");
        let mut layer = Self {
            weight,
            bias,
            wn_enabled,
        };
        if wn_enabled {
            layer.wn_project();
        }
        layer
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Rescales every weight row to unit L2 norm. Bias is left alone.
    ///
    /// Rows are divided by `max(norm, WN_EPS)`, so an all-zero row stays zero.
    pub fn wn_project(&mut self) {
        let cols = self.inputs();
        let eps = T::from_f64_lossy(WN_EPS);
        for row in self.weight.data_mut().chunks_mut(cols) {
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            let d = norm.max(eps);
            row.iter_mut().for_each(|x| *x /= d);
        }
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.weight
            .data()
            .chunks(self.inputs())
            .map(|row| row.iter().map(|&x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt())
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.weight
            .data()
            .iter()
            .map(|&x| x.as_f64() * x.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// `eta / ||W||_F^2`; infinite for an all-zero weight matrix.
    pub fn effective_lr(&self, eta: f64) -> f64 {
        effective_lr(self.frobenius_norm(), eta)
    }
}

pub fn effective_lr(frobenius_norm: f64, eta: f64) -> f64 {
    let sq = frobenius_norm * frobenius_norm;
    if sq == 0.0 {
        f64::INFINITY
    } else {
        eta / sq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(rows: &[Vec<f64>]) -> Linear<f64> {
        let weight = Tensor::from_rows(rows);
        let out = weight.shape()[0];
        Linear {
            weight,
            bias: Tensor::from_vec(&[out], (0..out).map(|i| i as f64 + 0.5).collect()).unwrap(),
            wn_enabled: true,
        }
    }

    #[test]
    fn projects_three_four_five() {
        let mut l = layer(&[vec![3.0, 4.0]]);
        l.wn_project();
        assert_eq!(l.weight.data(), &[0.6, 0.8]);
        assert_eq!(l.bias.data(), &[0.5]);
    }

    #[test]
    fn projection_is_idempotent() {
        let mut l = layer(&[vec![0.6, 0.8], vec![1.0, 0.0]]);
        let before = l.weight.clone();
        l.wn_project();
        for (a, b) in before.data().iter().zip(l.weight.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_row_stays_zero() {
        let mut l = layer(&[vec![0.0, 0.0], vec![2.0, 0.0]]);
        l.wn_project();
        assert_eq!(l.weight.data(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(l.weight.is_finite());
    }

    #[test]
    fn elr_follows_inverse_square_law() {
        let l = layer(&[vec![1.0, 0.0]]);
        assert_eq!(l.effective_lr(1e-3), 1e-3);
        let doubled = layer(&[vec![2.0, 0.0]]);
        assert_eq!(doubled.effective_lr(1e-3), 1e-3 / 4.0);
        let zero = layer(&[vec![0.0, 0.0]]);
        assert_eq!(zero.effective_lr(1e-3), f64::INFINITY);
    }

    #[test]
    fn init_with_wn_gives_unit_rows() {
        let mut rng = rand::rng();
        let l = Linear::<f32>::init(7, 5, true, &mut rng);
        for n in l.row_norms() {
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}
