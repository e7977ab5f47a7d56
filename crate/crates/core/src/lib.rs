//! Decentralized stochastic learning with Shapley-weighted cross-gradient
//! aggregation under per-round Gaussian differential privacy.

pub mod analysis;
pub mod data;
pub mod model;
pub mod privacy;
pub mod rng;
pub mod topology;
pub mod shapley;
pub mod engine;
pub mod experiment;
