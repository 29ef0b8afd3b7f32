//! CrossQ with weight normalization, built on a small reverse-mode tensor engine.

pub mod checkpoint;
pub mod diagnostics;
pub mod envs;
mod error;
pub mod harness;
pub mod nn;
pub mod rl;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
