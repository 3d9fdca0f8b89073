//! Boundary equilibrium GAN training on a small reverse-mode autodiff core.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod latent;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type ModelParams64 = nn::ModelParams<f64>;
pub type ModelParams32 = nn::ModelParams<f32>;
pub type Checkpoint64 = data::Checkpoint<f64>;
pub type Checkpoint32 = data::Checkpoint<f32>;
pub type Trainer64 = engine::Trainer<f64>;
pub type Trainer32 = engine::Trainer<f32>;
