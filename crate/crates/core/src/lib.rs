//! Generative modeling of 3-D point clouds: variational autoencoders with
//! PointNet or self-attention encoders, an inverse autoregressive latent
//! flow, a grouped autoregressive decoder, a masked autoregressive density
//! model, and permutation-invariant evaluation metrics.

pub mod geometry;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod rng;
pub mod training;
