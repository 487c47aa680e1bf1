//! Conditional diffusion engine for synthetic-aperture-radar tiles.

pub mod denoiser;
mod fsutil;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod sar_sim;
pub mod scheduler;
pub mod tensor;
pub mod training;
pub mod workflow;
