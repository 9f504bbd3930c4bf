//! Noise-relaying buffer inference: laddering initialization, then one
//! denoise pass and one executed action per environment step.

use crate::denoiser::{forward_single, DenoiserConfig, PredictKind};
use crate::env::demos::NormStats;
use crate::env::Env;
use crate::error::{CoreError, Result};
use crate::numkit::{ParamStore, Tensor};
use crate::schedule::{reverse_step, LevelVector, NoiseSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

/// A denoiser usable by the inference engines: maps (noisy frames,
/// per-frame levels, observation window) to per-frame predictions.
pub trait DenoiseModel {
    fn predict(&self, noisy: &Tensor, levels: &LevelVector, obs: &Tensor) -> Result<Tensor>;
    fn kind(&self) -> PredictKind;
    fn frames(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn obs_shape(&self) -> (usize, usize);
    /// Bound on the implied clean action during inference (actions are
    /// normalized to [-1, 1]); None disables clipping.
    fn clip(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// The trained network as a DenoiseModel.
pub struct Policy {
    pub cfg: DenoiserConfig,
    pub params: ParamStore,
}

impl DenoiseModel for Policy {
    fn predict(&self, noisy: &Tensor, levels: &LevelVector, obs: &Tensor) -> Result<Tensor> {
        forward_single(&self.cfg, &self.params, noisy, levels, obs)
    }
    fn kind(&self) -> PredictKind {
        self.cfg.predict
    }
    fn frames(&self) -> usize {
        self.cfg.f
    }
    fn action_dim(&self) -> usize {
        self.cfg.c_a
    }
    fn obs_shape(&self) -> (usize, usize) {
        (self.cfg.t_o, self.cfg.c_state)
    }
}

/// Clamp the clean-action estimate implied by an eps prediction to
/// `bound`, returning the eps that encodes the clamped estimate. This
/// mirrors the clip-sample option of standard DDPM samplers and keeps
/// the large-beta final reverse steps well conditioned; entries whose
/// implied estimate is already inside the bound pass through unchanged.
pub fn clip_eps(
    eps: Vec<f64>,
    a_k: &[f64],
    k: usize,
    sched: &NoiseSchedule,
    bound: Option<f64>,
) -> Vec<f64> {
    let Some(bound) = bound else { return eps };
    let abar = sched.alpha_bar(k);
    let (sa, se) = (abar.sqrt(), (1.0 - abar).sqrt());
    if se == 0.0 {
        return eps;
    }
    eps.into_iter()
        .zip(a_k)
        .map(|(e, &a)| {
            let x0 = (a - se * e) / sa;
            if x0.abs() <= bound {
                e
            } else {
                (a - sa * bound.copysign(x0)) / se
            }
        })
        .collect()
}

/// Convert a model prediction row into an eps estimate for level k.
pub fn eps_from_prediction(
    pred: &[f64],
    a_k: &[f64],
    k: usize,
    sched: &NoiseSchedule,
    kind: PredictKind,
) -> Vec<f64> {
    match kind {
        PredictKind::Noise => pred.to_vec(),
        PredictKind::Action => {
            let abar = sched.alpha_bar(k);
            let (sa, se) = (abar.sqrt(), (1.0 - abar).sqrt().max(1e-12));
            a_k.iter()
                .zip(pred)
                .map(|(&a, &x0)| (a - sa * x0) / se)
                .collect()
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StepTrace {
    pub t: usize,
    pub pre_levels: Vec<usize>,
    pub post_levels: Vec<usize>,
    pub nfe_delta: usize,
    pub action: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct InferenceTrace {
    pub steps: Vec<StepTrace>,
}

impl InferenceTrace {
    pub fn to_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)
                .map_err(|e| CoreError::InvalidConfig(format!("trace serialization: {}", e)))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub struct RelayBuffer {
    /// f x c_a frames in normalized action space.
    frames: Tensor,
    levels: LevelVector,
    pub t: usize,
    pub nfe_count: usize,
    pub actions_executed: usize,
}

impl RelayBuffer {
    pub fn levels(&self) -> &[usize] {
        self.levels.levels()
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn is_steady(&self) -> bool {
        self.levels.is_linear()
    }

    fn randn_frame<R: Rng>(c_a: usize, rng: &mut R) -> Vec<f64> {
        (0..c_a).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// All-max-noise buffer (the pure-noise ablation starts here).
    pub fn fresh<R: Rng>(f: usize, c_a: usize, rng: &mut R) -> Result<Self> {
        let data: Vec<f64> = (0..f * c_a).map(|_| rng.sample(StandardNormal)).collect();
        Ok(RelayBuffer {
            frames: Tensor::from_vec(&[f, c_a], data)?,
            levels: LevelVector::new(vec![f; f]),
            t: 0,
            nfe_count: 0,
            actions_executed: 0,
        })
    }
}

/// Noise for one reverse step; zeroed when `deterministic`.
fn step_noise<R: Rng>(c_a: usize, deterministic: bool, rng: &mut R) -> Vec<f64> {
    if deterministic {
        vec![0.0; c_a]
    } else {
        (0..c_a).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// Laddering initialization: start from all-level-f noise, then run
/// f-1 passes. Each pass makes one forward call over all frames and
/// reverse-steps every frame whose level still exceeds its ladder
/// target j+1, conditioned on the frozen first observation.
pub fn ladder_init<M: DenoiseModel, R: Rng>(
    model: &M,
    obs0: &Tensor,
    sched: &NoiseSchedule,
    deterministic: bool,
    rng: &mut R,
) -> Result<RelayBuffer> {
    let f = model.frames();
    if sched.levels() != f {
        return Err(CoreError::InvalidConfig(format!(
            "schedule levels {} != model frames {}",
            sched.levels(),
            f
        )));
    }
    let c_a = model.action_dim();
    let mut buf = RelayBuffer::fresh(f, c_a, rng)?;
    for _pass in 0..f - 1 {
        let pred = model.predict(&buf.frames, &buf.levels, obs0)?;
        buf.nfe_count += 1;
        for j in 0..f {
            let k = buf.levels.levels()[j];
            if k > j + 1 {
                let eps = eps_from_prediction(pred.row(j), buf.frames.row(j), k, sched, model.kind());
                let eps = clip_eps(eps, buf.frames.row(j), k, sched, model.clip());
                let z = step_noise(c_a, deterministic, rng);
                let next = reverse_step(buf.frames.row(j), &eps, k, &z, sched)?;
                for (c, v) in next.into_iter().enumerate() {
                    buf.frames.set2(j, c, v);
                }
                buf.levels.levels_mut()[j] = k - 1;
            }
        }
    }
    if !buf.is_steady() {
        return Err(CoreError::InvalidConfig(format!(
            "laddering left levels {:?}",
            buf.levels()
        )));
    }
    Ok(buf)
}

fn relay_step_inner<M: DenoiseModel, R: Rng>(
    buf: &mut RelayBuffer,
    model: &M,
    obs: &Tensor,
    sched: &NoiseSchedule,
    deterministic: bool,
    clamp_targets: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let f = model.frames();
    let c_a = model.action_dim();
    let pred = model.predict(&buf.frames, &buf.levels, obs)?;
    buf.nfe_count += 1;
    // denoise every frame once; frame j's target after this step is j
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(f);
    for j in 0..f {
        let k = buf.levels.levels()[j];
        let eps = eps_from_prediction(pred.row(j), buf.frames.row(j), k, sched, model.kind());
        let eps = clip_eps(eps, buf.frames.row(j), k, sched, model.clip());
        let z = step_noise(c_a, deterministic, rng);
        rows.push(reverse_step(buf.frames.row(j), &eps, k, &z, sched)?);
        let next = if clamp_targets { (k - 1).min(j) } else { k - 1 };
        buf.levels.levels_mut()[j] = next;
    }
    if buf.levels.levels()[0] != 0 {
        return Err(CoreError::InvalidConfig(format!(
            "head at level {} after denoise",
            buf.levels.levels()[0]
        )));
    }
    let head = rows[0].clone();
    // shift left, append fresh noise at level f
    let mut data = Vec::with_capacity(f * c_a);
    for row in rows.iter().skip(1) {
        data.extend(row);
    }
    data.extend(RelayBuffer::randn_frame(c_a, rng));
    buf.frames = Tensor::from_vec(&[f, c_a], data)?;
    let lv = buf.levels.levels_mut();
    for j in 0..f - 1 {
        lv[j] = lv[j + 1];
    }
    lv[f - 1] = f;
    buf.t += 1;
    buf.actions_executed += 1;
    Ok(head)
}

/// One relay step from a steady-state buffer: single forward pass, one
/// reverse step per frame, pop the clean head, append fresh noise.
/// Returns the executed action in normalized space.
pub fn relay_step<M: DenoiseModel, R: Rng>(
    buf: &mut RelayBuffer,
    model: &M,
    obs: &Tensor,
    sched: &NoiseSchedule,
    deterministic: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !buf.is_steady() {
        return Err(CoreError::InvalidConfig(format!(
            "relay_step needs steady ladder, levels {:?}",
            buf.levels()
        )));
    }
    relay_step_inner(buf, model, obs, sched, deterministic, false, rng)
}

/// Relay step for the pure-noise ablation: per-frame levels clamp to
/// their ladder targets, so the ladder shape appears after one step
/// even though the content skipped the missing denoise passes.
pub fn relay_step_clamped<M: DenoiseModel, R: Rng>(
    buf: &mut RelayBuffer,
    model: &M,
    obs: &Tensor,
    sched: &NoiseSchedule,
    deterministic: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    relay_step_inner(buf, model, obs, sched, deterministic, true, rng)
}

#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub success: bool,
    pub steps: usize,
    /// Observation before each executed action (raw env coordinates).
    pub obs: Vec<Vec<f64>>,
    /// Executed actions (raw env coordinates).
    pub actions: Vec<Vec<f64>>,
    pub nfes: usize,
}

/// Rolling window of the last t_o normalized observations, padded at
/// the episode start by repeating the first observation.
pub struct ObsWindow {
    t_o: usize,
    c_state: usize,
    rows: Vec<Vec<f64>>,
    stats: NormStats,
}

impl ObsWindow {
    pub fn new(t_o: usize, c_state: usize, stats: NormStats, first_obs: &[f64]) -> Self {
        let mut normed = Vec::new();
        stats.norm_obs(first_obs, &mut normed);
        ObsWindow {
            t_o,
            c_state,
            rows: vec![normed; t_o],
            stats,
        }
    }

    pub fn push(&mut self, obs: &[f64]) {
        let mut normed = Vec::new();
        self.stats.norm_obs(obs, &mut normed);
        self.rows.remove(0);
        self.rows.push(normed);
    }

    pub fn tensor(&self) -> Result<Tensor> {
        let mut data = Vec::with_capacity(self.t_o * self.c_state);
        for r in &self.rows {
            data.extend(r);
        }
        Tensor::from_vec(&[self.t_o, self.c_state], data)
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }
}

fn rollout_impl<M: DenoiseModel>(
    env: &mut dyn Env,
    model: &M,
    sched: &NoiseSchedule,
    stats: &NormStats,
    max_steps: usize,
    seed: u64,
    deterministic: bool,
    ladder: bool,
) -> Result<(EpisodeRecord, InferenceTrace)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x72656c6179);
    let first = env.reset(seed);
    let (t_o, c_state) = model.obs_shape();
    let mut window = ObsWindow::new(t_o, c_state, stats.clone(), &first);
    let mut buf = if ladder {
        ladder_init(model, &window.tensor()?, sched, deterministic, &mut rng)?
    } else {
        RelayBuffer::fresh(model.frames(), model.action_dim(), &mut rng)?
    };
    let mut record = EpisodeRecord {
        success: false,
        steps: 0,
        obs: Vec::new(),
        actions: Vec::new(),
        nfes: 0,
    };
    let mut trace = InferenceTrace::default();
    let mut obs = first;
    while !env.done() && record.steps < max_steps {
        let pre = buf.levels().to_vec();
        let nfe_before = buf.nfe_count;
        let obs_t = window.tensor()?;
        let normed = if ladder {
            relay_step(&mut buf, model, &obs_t, sched, deterministic, &mut rng)?
        } else {
            relay_step_clamped(&mut buf, model, &obs_t, sched, deterministic, &mut rng)?
        };
        let action = stats.denorm_act(&normed);
        let out = env.step(&action).map_err(|e| CoreError::Env {
            step: record.steps,
            msg: format!("{}", e),
        })?;
        trace.steps.push(StepTrace {
            t: record.steps,
            pre_levels: pre,
            post_levels: buf.levels().to_vec(),
            nfe_delta: buf.nfe_count - nfe_before,
            action: action.clone(),
        });
        record.obs.push(obs);
        record.actions.push(action);
        record.steps += 1;
        obs = out.obs;
        window.push(&obs);
    }
    record.success = env.success();
    record.nfes = buf.nfe_count;
    Ok((record, trace))
}

/// Full episode with laddering initialization (the standard relay mode).
pub fn relay_rollout<M: DenoiseModel>(
    env: &mut dyn Env,
    model: &M,
    sched: &NoiseSchedule,
    stats: &NormStats,
    max_steps: usize,
    seed: u64,
    deterministic: bool,
) -> Result<(EpisodeRecord, InferenceTrace)> {
    rollout_impl(env, model, sched, stats, max_steps, seed, deterministic, true)
}

/// Full episode starting from a fully noisy buffer (ablation).
pub fn pure_noise_rollout<M: DenoiseModel>(
    env: &mut dyn Env,
    model: &M,
    sched: &NoiseSchedule,
    stats: &NormStats,
    max_steps: usize,
    seed: u64,
    deterministic: bool,
) -> Result<(EpisodeRecord, InferenceTrace)> {
    rollout_impl(env, model, sched, stats, max_steps, seed, deterministic, false)
}
