//! Bayesian equation selection for stochastic differential equations from
//! sparse, noisy observations: spike-and-slab search over a quadratic
//! dictionary, then inference on the reduced model, both with the diffusion
//! integrated out of the sampled target.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod dictionary;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod io;
pub mod posterior;
pub mod samplers;
pub mod selection;
