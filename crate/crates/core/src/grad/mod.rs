//! Minimal reverse-mode differentiation over dense 2-d tensors, enough for
//! MLP encoders and decoders, the reparameterization trick and the VAE
//! objectives. Values and gradients are `f64`; parameters are held at `f32`
//! precision (see [`ParamSet`]).

mod graph;
mod params;
mod tensor;

pub use graph::{cov_penalty_value, latent_covariance, tc_mws, Gradients, Graph, NodeId};
pub use params::{AdamConfig, BoundParams, ParamSet};
pub use tensor::{affine, matmul, Tensor2};

#[cfg(test)]
use graph::gaussian_kl;
pub(crate) use tensor::{sigmoid, softplus};
