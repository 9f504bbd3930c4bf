//! Responsive noise-relaying diffusion policy at desk scale: per-frame
//! noise DDPM training, a noise-relaying buffer for one-step-per-action
//! inference, vanilla diffusion-policy and DDIM baselines, and two toy
//! control benchmarks with scripted experts.

pub mod baselines;
pub mod denoiser;
pub mod env;
pub mod error;
pub mod harness;
pub mod numkit;
pub mod relay;
pub mod schedule;
pub mod trainer;

pub use error::{CoreError, Result};
