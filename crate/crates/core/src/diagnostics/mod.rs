//! Measurement: Q-bias against Monte-Carlo returns, critic weight norms and
//! effective learning rates, and IQM aggregation with bootstrap intervals.

mod qbias;
mod stats;
mod weights;

pub use qbias::{q_bias, sample_start_pairs, QBiasConfig, QBiasEstimate, QFunction};
pub use stats::{bootstrap_ci, iqm, normalize_returns, Interval};
pub use weights::{weight_trace, LayerNorm, WeightNormPoint, WeightNormTrace};

use crate::rng::Rng;
use crate::{Error, Result};

/// IQM curve over seeds with a confidence band, on the evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub label: String,
    /// Environment id, or `all` for pooled normalised scores.
    pub scope: String,
    pub level: f64,
    pub seeds: usize,
    pub steps: Vec<u64>,
    pub iqm: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl AggregateCurve {
    /// Aggregates `runs` (seeds x timepoints). A single seed yields a
    /// zero-width band.
    pub fn from_runs(
        label: impl Into<String>,
        scope: impl Into<String>,
        steps: Vec<u64>,
        runs: &[Vec<f64>],
        level: f64,
        n_boot: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::contract("aggregate of zero seeds"));
        }
        if runs.iter().any(|r| r.len() != steps.len()) {
            return Err(Error::contract("run length does not match the step grid"));
        }
        let ci = if runs.len() == 1 {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::contract(format!("confidence level {level} outside (0, 1)")));
            }
            Interval {
                point: runs[0].clone(),
                lower: runs[0].clone(),
                upper: runs[0].clone(),
            }
        } else {
            bootstrap_ci(runs, level, n_boot, rng)?
        };
        Ok(Self {
            label: label.into(),
            scope: scope.into(),
            level,
            seeds: runs.len(),
            steps,
            iqm: ci.point,
            lower: ci.lower,
            upper: ci.upper,
        })
    }
}
