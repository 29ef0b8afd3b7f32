//! Linear and batch-norm layers, weight-norm projection, MLPs and Adam.
//!
//! Parameters are plain [`Tensor`](crate::tensor::Tensor)s owned by the
//! layers. A training step binds them onto a fresh tape, runs the loss,
//! reads gradients back and hands them to [`Adam`]. Layers with weight
//! normalisation are re-projected to unit rows right after every update.

mod adam;
mod batchnorm;
mod linear;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use batchnorm::{BatchNorm, BatchStats, BoundBatchNorm, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use linear::{effective_lr, Linear, WN_EPS};
pub use mlp::{BoundMlp, Mlp, MlpSpec};

use crate::tensor::{Real, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise with the current batch statistics.
    Train,
    /// Normalise with running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn apply_var<'t, T: Real>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}
