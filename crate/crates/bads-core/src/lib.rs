//! Joint stochastic-gradient Langevin inference of a small network's
//! parameters and per-example importance weights, guided by a curated meta
//! set. Includes deterministic synthetic scenario generators (class
//! imbalance, label noise, domain mixture), the non-selection baseline
//! trainers, a shared training loop, and a grid-oracle check that the
//! sampler targets the intended posterior on a tractable micro-model.

pub mod baselines;
pub mod data;
pub mod engine;
pub mod error;
pub mod matrix;
pub mod nn;
pub mod posterior;
pub mod rng;
pub mod stream;
pub mod trainer;
pub mod weights;

pub use error::{CoreError, Result};
pub use matrix::Matrix;
pub use rng::Rng;
