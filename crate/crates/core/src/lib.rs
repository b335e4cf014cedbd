//! Latent-space generative models with learned priors.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod flow;
pub mod latent;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nets;
pub mod objective;
pub mod optim;
pub mod params;
pub mod prior;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
