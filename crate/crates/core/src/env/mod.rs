//! Deterministic toy control environments with scripted experts.

pub mod bimodal;
pub mod demos;
pub mod driftpush;

use crate::error::{CoreError, Result};

pub use bimodal::BimodalReach;
pub use demos::{load_demos, save_demos, gen_demos, DemoDataset, Episode, NormStats};
pub use driftpush::DriftPush;

pub struct StepOut {
    pub obs: Vec<f64>,
    pub done: bool,
    pub success: bool,
}

/// A single-owner environment instance. (seed, action sequence) fixes
/// the full trajectory bitwise.
pub trait Env {
    fn env_id(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
    /// Reset with a seed; returns the initial observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepOut>;
    /// True once the episode has terminated.
    fn done(&self) -> bool;
    /// Success flag, meaningful once done (or immediately on reset for
    /// tasks whose goal condition can hold at the start state).
    fn success(&self) -> bool;
    fn steps_taken(&self) -> usize;
}

pub fn make_env(env_id: &str) -> Result<Box<dyn Env>> {
    match env_id {
        "bimodal_reach" => Ok(Box::new(BimodalReach::new())),
        "drift_push" => Ok(Box::new(DriftPush::new())),
        other => Err(CoreError::InvalidConfig(format!(
            "unknown env id {:?}",
            other
        ))),
    }
}

pub(crate) fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

pub(crate) fn clip_action(a: &[f64]) -> (f64, f64) {
    (a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0))
}
