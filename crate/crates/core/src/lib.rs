//! Factored non-stationary MDPs: a ground-truth simulator, causal graph
//! recovery by conditional-independence testing, the FN-VAE model learner,
//! soft actor-critic, and the FANS-RL loop that ties them together.

pub mod checkpoint;
pub mod cli;
pub mod driver;
pub mod env;
pub mod error;
pub mod fnvae;
pub mod numkit;
pub mod graph;
pub mod ident;
pub mod rng;
pub mod sac;

pub use error::{Error, Result};
