//! Tensors, a reverse-mode tape, network building blocks, Gaussian utilities
//! and Adam.

pub mod adam;
pub mod gaussian;
pub mod nn;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamState};
pub use gaussian::{gaussian_nll, kl_diag_gaussians, GaussianHead, LOG_VAR_MAX, LOG_VAR_MIN};
pub use nn::{Activation, Init, Linear, LstmCell, Mlp};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Graph, Var};
pub use tensor::Tensor;
