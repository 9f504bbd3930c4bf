//! Vanilla Diffusion Policy inference (full K-step denoising with a
//! receding execution horizon) and DDIM-accelerated inference. Both
//! share the relay module's model trait and the schedule code paths.

use crate::env::Env;
use crate::error::{CoreError, Result};
use crate::numkit::Tensor;
use crate::relay::{clip_eps, eps_from_prediction, DenoiseModel, EpisodeRecord, ObsWindow};
use crate::schedule::{ddim_step, reverse_step, LevelVector, NoiseSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampler {
    Ddpm,
    Ddim,
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sampler::Ddpm => write!(f, "ddpm"),
            Sampler::Ddim => write!(f, "ddim"),
        }
    }
}

impl FromStr for Sampler {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(Sampler::Ddpm),
            "ddim" => Ok(Sampler::Ddim),
            other => Err(CoreError::InvalidConfig(format!(
                "unknown sampler {:?}",
                other
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DPInferConfig {
    /// Prediction horizon; must equal the model frame count.
    pub t_p: usize,
    /// Execution horizon per inference.
    pub t_a: usize,
    /// DDPM denoise steps (chain starts at level k).
    pub k: usize,
    /// DDIM step count; unused for ddpm.
    pub s: usize,
    pub sampler: Sampler,
}

impl DPInferConfig {
    pub fn validate(&self, model_frames: usize, sched_levels: usize) -> Result<()> {
        if self.t_a < 1 || self.t_a > self.t_p {
            return Err(CoreError::InvalidConfig(format!(
                "need 1 <= T_a <= T_p, got T_a={} T_p={}",
                self.t_a, self.t_p
            )));
        }
        if self.t_p != model_frames {
            return Err(CoreError::InvalidConfig(format!(
                "T_p {} != model frames {}",
                self.t_p, model_frames
            )));
        }
        if self.k < 1 || self.k > sched_levels {
            return Err(CoreError::InvalidConfig(format!(
                "K {} outside 1..={}",
                self.k, sched_levels
            )));
        }
        if self.sampler == Sampler::Ddim && (self.s < 1 || self.s > self.k) {
            return Err(CoreError::InvalidConfig(format!(
                "need 1 <= S <= K, got S={} K={}",
                self.s, self.k
            )));
        }
        Ok(())
    }

    /// Model forwards consumed by one inference call.
    pub fn nfes_per_infer(&self) -> usize {
        match self.sampler {
            Sampler::Ddpm => self.k,
            Sampler::Ddim => self.s,
        }
    }
}

/// Evenly spaced DDIM source levels from K down to 1 (S entries,
/// strictly decreasing, containing K and, for S >= 2, level 1).
pub fn ddim_levels(k: usize, s: usize) -> Vec<usize> {
    if s == 1 {
        return vec![k];
    }
    let mut out = Vec::with_capacity(s);
    for i in 0..s {
        let v = k as f64 - i as f64 * (k - 1) as f64 / (s - 1) as f64;
        let v = v.round() as usize;
        let v = v.clamp(1, k);
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

/// Denoise a full T_p-frame sequence from fresh Gaussian noise with one
/// shared level per pass. Returns the normalized clean sequence.
pub fn dp_infer<M: DenoiseModel, R: Rng>(
    model: &M,
    obs: &Tensor,
    cfg: &DPInferConfig,
    sched: &NoiseSchedule,
    deterministic: bool,
    rng: &mut R,
) -> Result<Tensor> {
    cfg.validate(model.frames(), sched.levels())?;
    let (f, c_a) = (cfg.t_p, model.action_dim());
    let data: Vec<f64> = (0..f * c_a).map(|_| rng.sample(StandardNormal)).collect();
    let mut a = Tensor::from_vec(&[f, c_a], data)?;
    match cfg.sampler {
        Sampler::Ddpm => {
            for k in (1..=cfg.k).rev() {
                let levels = LevelVector::new(vec![k; f]);
                let pred = model.predict(&a, &levels, obs)?;
                for j in 0..f {
                    let eps = eps_from_prediction(pred.row(j), a.row(j), k, sched, model.kind());
                    let eps = clip_eps(eps, a.row(j), k, sched, model.clip());
                    let z: Vec<f64> = if deterministic {
                        vec![0.0; c_a]
                    } else {
                        (0..c_a).map(|_| rng.sample(StandardNormal)).collect()
                    };
                    let next = reverse_step(a.row(j), &eps, k, &z, sched)?;
                    for (c, v) in next.into_iter().enumerate() {
                        a.set2(j, c, v);
                    }
                }
            }
        }
        Sampler::Ddim => {
            let srcs = ddim_levels(cfg.k, cfg.s);
            for (i, &k) in srcs.iter().enumerate() {
                let k_prev = srcs.get(i + 1).copied().unwrap_or(0);
                let levels = LevelVector::new(vec![k; f]);
                let pred = model.predict(&a, &levels, obs)?;
                for j in 0..f {
                    let eps = eps_from_prediction(pred.row(j), a.row(j), k, sched, model.kind());
                    let eps = clip_eps(eps, a.row(j), k, sched, model.clip());
                    let next = ddim_step(a.row(j), &eps, k, k_prev, sched)?;
                    for (c, v) in next.into_iter().enumerate() {
                        a.set2(j, c, v);
                    }
                }
            }
        }
    }
    Ok(a)
}

/// Receding-horizon rollout: infer a T_p-frame chunk, execute the first
/// T_a actions open-loop, repeat. Also returns the inference-chunk
/// index of every executed action.
pub fn dp_rollout<M: DenoiseModel>(
    env: &mut dyn Env,
    model: &M,
    cfg: &DPInferConfig,
    sched: &NoiseSchedule,
    stats: &crate::env::demos::NormStats,
    max_steps: usize,
    seed: u64,
    deterministic: bool,
) -> Result<(EpisodeRecord, Vec<usize>)> {
    cfg.validate(model.frames(), sched.levels())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x64705f62617365);
    let first = env.reset(seed);
    let (t_o, c_state) = model.obs_shape();
    let mut window = ObsWindow::new(t_o, c_state, stats.clone(), &first);
    let mut record = EpisodeRecord {
        success: false,
        steps: 0,
        obs: Vec::new(),
        actions: Vec::new(),
        nfes: 0,
    };
    let mut chunk_ids = Vec::new();
    let mut chunk = 0usize;
    let mut obs = first;
    'outer: while !env.done() && record.steps < max_steps {
        let plan = dp_infer(model, &window.tensor()?, cfg, sched, deterministic, &mut rng)?;
        record.nfes += cfg.nfes_per_infer();
        for j in 0..cfg.t_a {
            if env.done() || record.steps >= max_steps {
                break 'outer;
            }
            let action = stats.denorm_act(plan.row(j));
            let out = env.step(&action).map_err(|e| CoreError::Env {
                step: record.steps,
                msg: format!("{}", e),
            })?;
            record.obs.push(obs);
            record.actions.push(action);
            chunk_ids.push(chunk);
            record.steps += 1;
            obs = out.obs;
            window.push(&obs);
        }
        chunk += 1;
    }
    record.success = env.success();
    Ok((record, chunk_ids))
}
