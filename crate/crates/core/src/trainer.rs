//! Training loop: window sampling from demo datasets, level-scheduled
//! perturbation, noise/action-prediction MSE, AdamW with cosine decay
//! and warmup, EMA shadow weights.

use crate::denoiser::{forward_batch, init_params, DenoiserConfig, PredictKind};
use crate::env::demos::DemoDataset;
use crate::error::{CoreError, Result};
use crate::numkit::{ParamStore, Tape, Tensor};
use crate::schedule::{perturb, sample_levels, LevelMode, NoiseSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub schedule_mode: LevelMode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps > 0 && self.warmup >= self.steps {
            return Err(CoreError::InvalidConfig(format!(
                "warmup {} must be < steps {}",
                self.warmup, self.steps
            )));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(CoreError::InvalidConfig(format!(
                "ema_decay {} outside [0, 1)",
                self.ema_decay
            )));
        }
        if self.batch < 1 || self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(CoreError::InvalidConfig(
                "need batch >= 1, lr > 0, weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Adam first/second moments, laid out parallel to the parameter store.
pub struct OptimizerState {
    names: Vec<String>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub t: usize,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let mut names = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, p, _) in params.iter() {
            names.push(name.to_string());
            m.push(Tensor::zeros(p.shape()));
            v.push(Tensor::zeros(p.shape()));
        }
        OptimizerState { names, m, v, t: 0 }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Decoupled-weight-decay Adam update with bias correction. Decay is
/// applied to the weights before the Adam delta.
pub fn adamw_step(
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    lr_t: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    opt.t += 1;
    let bc1 = 1.0 - BETA1.powi(opt.t as i32);
    let bc2 = 1.0 - BETA2.powi(opt.t as i32);
    for (i, (name, p, g)) in params.iter_mut().enumerate() {
        if opt.names[i] != name {
            return Err(CoreError::UnknownParam(name.to_string()));
        }
        if !g.all_finite() {
            return Err(CoreError::NonFinite(format!("gradient of {}", name)));
        }
        let m = opt.m[i].data_mut();
        let v = opt.v[i].data_mut();
        for ((w, &grad), (mi, vi)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *w -= lr_t * cfg.weight_decay * *w;
            *mi = BETA1 * *mi + (1.0 - BETA1) * grad;
            *vi = BETA2 * *vi + (1.0 - BETA2) * grad * grad;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr_t * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Linear warmup to cfg.lr, then cosine decay to 0 at cfg.steps.
pub fn cosine_lr(step: usize, cfg: &TrainConfig) -> f64 {
    if step < cfg.warmup {
        return cfg.lr * step as f64 / cfg.warmup as f64;
    }
    let span = (cfg.steps - cfg.warmup) as f64;
    let progress = if span > 0.0 {
        (step - cfg.warmup) as f64 / span
    } else {
        1.0
    };
    cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// ema <- decay * ema + (1 - decay) * w, elementwise.
pub fn ema_update(ema: &mut ParamStore, w: &ParamStore, decay: f64) -> Result<()> {
    let src: Vec<(&str, &Tensor)> = w.iter().map(|(n, p, _)| (n, p)).collect();
    for (i, (name, e, _)) in ema.iter_mut().enumerate() {
        let (sname, sp) = src
            .get(i)
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))?;
        if *sname != name || sp.shape() != e.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "ema_update",
                detail: format!("{} vs {}", name, sname),
            });
        }
        for (ev, &wv) in e.data_mut().iter_mut().zip(sp.data()) {
            *ev = decay * *ev + (1.0 - decay) * wv;
        }
    }
    Ok(())
}

/// One normalized training window: f actions plus the observation
/// window (t_o observations) ending at the window start.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// f x c_a, row-major, normalized to [-1, 1].
    pub actions: Vec<f64>,
    /// t_o x c_state flattened, oldest first, normalized.
    pub obs: Vec<f64>,
}

/// Draw one window uniformly over (episode, start) pairs. Windows never
/// cross episode boundaries: actions past the end repeat the final
/// action, observations before the start repeat the first observation.
pub fn sample_window<R: Rng>(
    ds: &DemoDataset,
    f: usize,
    t_o: usize,
    rng: &mut R,
) -> Result<Window> {
    let total = ds.total_steps();
    if total == 0 {
        return Err(CoreError::InvalidConfig("dataset has no steps".into()));
    }
    let mut pick = rng.gen_range(0..total);
    let mut ep_idx = 0;
    while pick >= ds.episodes[ep_idx].steps {
        pick -= ds.episodes[ep_idx].steps;
        ep_idx += 1;
    }
    window_at(ds, ep_idx, pick, f, t_o)
}

/// Deterministic window extraction at (episode, start).
pub fn window_at(
    ds: &DemoDataset,
    ep_idx: usize,
    start: usize,
    f: usize,
    t_o: usize,
) -> Result<Window> {
    let ep = &ds.episodes[ep_idx];
    if start >= ep.steps {
        return Err(CoreError::InvalidConfig(format!(
            "window start {} beyond episode length {}",
            start, ep.steps
        )));
    }
    let (od, ad) = (ds.obs_dim(), ds.act_dim());
    let mut actions = Vec::with_capacity(f * ad);
    for j in 0..f {
        let t = (start + j).min(ep.steps - 1);
        let raw = &ep.actions[t * ad..(t + 1) * ad];
        actions.extend(ds.norm_stats.norm_act(raw));
    }
    let mut obs = Vec::with_capacity(t_o * od);
    for j in 0..t_o {
        let t = (start + j + 1).saturating_sub(t_o);
        ds.norm_stats
            .norm_obs(&ep.obs[t * od..(t + 1) * od], &mut obs);
    }
    Ok(Window { actions, obs })
}

pub struct TrainState {
    pub params: ParamStore,
    pub ema: ParamStore,
    pub opt: OptimizerState,
}

impl TrainState {
    pub fn init(dcfg: &DenoiserConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(dcfg, &mut rng)?;
        let ema = params.clone();
        let opt = OptimizerState::new(&params);
        Ok(TrainState { params, ema, opt })
    }
}

/// One optimization step over a batch of windows: sample levels, draw
/// eps, perturb, forward, MSE against eps or the clean actions,
/// backprop, AdamW, EMA. Returns the scalar loss.
pub fn train_step<R: Rng>(
    batch: &[Window],
    state: &mut TrainState,
    dcfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    lr_t: f64,
    rng: &mut R,
) -> Result<f64> {
    let b = batch.len();
    if b == 0 {
        return Err(CoreError::InvalidConfig("empty batch".into()));
    }
    let (f, ca) = (dcfg.f, dcfg.c_a);
    if sched.levels() != f {
        return Err(CoreError::InvalidConfig(format!(
            "schedule levels {} != denoiser f {}",
            sched.levels(),
            f
        )));
    }
    for w in batch {
        if w.actions.len() != f * ca || w.obs.len() != dcfg.obs_input() {
            return Err(CoreError::ShapeMismatch {
                op: "train_step",
                detail: format!(
                    "window {} actions / {} obs vs f*c_a {} / obs_input {}",
                    w.actions.len(),
                    w.obs.len(),
                    f * ca,
                    dcfg.obs_input()
                ),
            });
        }
    }

    let mut levels = Vec::with_capacity(b);
    let mut noisy_rows = Vec::with_capacity(b * f * ca);
    let mut target_rows = Vec::with_capacity(b * f * ca);
    let mut obs_rows = Vec::with_capacity(b * dcfg.obs_input());
    for w in batch {
        let lv = sample_levels(cfg.schedule_mode, f, rng)?;
        let clean = Tensor::from_vec(&[f, ca], w.actions.clone())?;
        let eps_vals: Vec<f64> = (0..f * ca).map(|_| rng.sample(StandardNormal)).collect();
        let eps = Tensor::from_vec(&[f, ca], eps_vals)?;
        let noisy = perturb(&clean, &lv, &eps, sched)?;
        noisy_rows.extend(noisy.data());
        match dcfg.predict {
            PredictKind::Noise => target_rows.extend(eps.data()),
            PredictKind::Action => target_rows.extend(clean.data()),
        }
        obs_rows.extend(&w.obs);
        levels.push(lv);
    }
    let noisy = Tensor::from_vec(&[b * f, ca], noisy_rows)?;
    let target = Tensor::from_vec(&[b * f, ca], target_rows)?;
    let obs = Tensor::from_vec(&[b, dcfg.obs_input()], obs_rows)?;

    let mut tape = Tape::new();
    let rec = forward_batch(&mut tape, dcfg, &state.params, &noisy, &levels, &obs)?;
    let tvar = tape.leaf(target);
    let loss_var = tape.mse(rec.output, tvar)?;
    let loss = tape.value(loss_var).item();
    let grads = tape.backward(loss_var)?;
    state.params.zero_grads();
    for (name, var) in &rec.param_vars {
        if let Some(g) = &grads[var.0] {
            state.params.add_grad(name, g)?;
        }
    }
    adamw_step(&mut state.params, &mut state.opt, lr_t, cfg)?;
    ema_update(&mut state.ema, &state.params, cfg.ema_decay)?;
    Ok(loss)
}

pub struct TrainRun {
    pub params: ParamStore,
    pub ema: ParamStore,
    /// One (step, lr, loss) row per optimization step.
    pub curve: Vec<(usize, f64, f64)>,
}

/// Full training run over uniformly sampled windows. (dataset, cfg,
/// seed) fixes the loss curve bitwise.
pub fn train_run(
    ds: &DemoDataset,
    dcfg: &DenoiserConfig,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
) -> Result<TrainRun> {
    cfg.validate()?;
    dcfg.validate()?;
    if ds.episodes.is_empty() {
        return Err(CoreError::InvalidConfig("empty dataset".into()));
    }
    if ds.obs_dim() != dcfg.c_state || ds.act_dim() != dcfg.c_a {
        return Err(CoreError::InvalidConfig(format!(
            "dataset dims ({}, {}) vs denoiser ({}, {})",
            ds.obs_dim(),
            ds.act_dim(),
            dcfg.c_state,
            dcfg.c_a
        )));
    }
    let mut state = TrainState::init(dcfg, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<Window> = (0..cfg.batch)
            .map(|_| sample_window(ds, dcfg.f, dcfg.t_o, &mut rng))
            .collect::<Result<_>>()?;
        let lr_t = cosine_lr(step, cfg);
        let loss = train_step(&batch, &mut state, dcfg, sched, cfg, lr_t, &mut rng)?;
        curve.push((step, lr_t, loss));
    }
    Ok(TrainRun {
        params: state.params,
        ema: state.ema,
        curve,
    })
}

/// Write the loss curve as CSV with a header row.
pub fn write_loss_curve(path: &std::path::Path, curve: &[(usize, f64, f64)]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,lr,loss")?;
    for (step, lr, loss) in curve {
        writeln!(f, "{},{},{}", step, lr, loss)?;
    }
    f.flush()?;
    Ok(())
}
