use crate::rl::CriticPair;
use crate::tensor::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    /// `q{critic}.linear{layer}`.
    pub name: String,
    pub frobenius: f64,
    pub elr: f64,
    /// Rows are kept at unit norm.
    pub projected: bool,
    pub final_layer: bool,
    pub out_dim: usize,
}

/// Weight norms of every linear layer of both online critics at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightNormPoint {
    pub env_step: u64,
    pub layers: Vec<LayerNorm>,
}

impl WeightNormPoint {
    /// `sqrt(sum ||W||_F^2)` over the selected layers.
    pub fn total(&self, filter: impl Fn(&LayerNorm) -> bool) -> f64 {
        self.layers
            .iter()
            .filter(|l| filter(l))
            .map(|l| l.frobenius * l.frobenius)
            .sum::<f64>()
            .sqrt()
    }

    /// Total over hidden layers, the ones weight normalisation constrains.
    pub fn hidden_total(&self) -> f64 {
        self.total(|l| !l.final_layer)
    }
}

pub fn weight_trace<T: Real>(critics: &CriticPair<T>, env_step: u64, eta: f64) -> WeightNormPoint {
    let layers = critics
        .q
        .iter()
        .enumerate()
        .flat_map(|(c, q)| {
            let depth = q.linears.len();
            q.linears.iter().enumerate().map(move |(i, l)| LayerNorm {
                name: format!("q{c}.linear{i}"),
                frobenius: l.frobenius_norm(),
                elr: l.effective_lr(eta),
                projected: l.wn_enabled,
                final_layer: i + 1 == depth,
                out_dim: l.outputs(),
            })
        })
        .collect();
    WeightNormPoint { env_step, layers }
}

/// Weight-norm history with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightNormTrace {
    points: Vec<WeightNormPoint>,
}

impl WeightNormTrace {
    pub fn push(&mut self, point: WeightNormPoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if point.env_step <= last.env_step {
                return Err(Error::contract(format!(
                    "weight trace step {} does not follow {}",
                    point.env_step, last.env_step
                )));
            }
        }
        self.points.push(point);
        Ok(())
    }

    pub fn points(&self) -> &[WeightNormPoint] {
        &self.points
    }
}
