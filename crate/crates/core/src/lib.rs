//! Channel scenario identification with a conditional diffusion model.
//!
//! The crate synthesizes labeled multipath channel frequency responses,
//! trains a conditioned noise-prediction transformer on them, and identifies
//! the scenario of an unseen channel by Monte-Carlo estimation of the
//! per-scenario diffusion residual. A logistic-regression baseline over four
//! classic channel statistics is included for comparison.

pub mod channelgen;
pub mod diffusion;
pub mod error;
pub mod model;
pub mod numcore;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
