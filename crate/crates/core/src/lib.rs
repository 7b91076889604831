//! Class-conditional denoising diffusion on long-tailed synthetic data, with a
//! probabilistic contrastive regularizer that penalizes overlap between the
//! denoising distributions of different classes.

pub mod audit;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod toylab;
pub mod trainer;

pub use error::{Error, Result};
