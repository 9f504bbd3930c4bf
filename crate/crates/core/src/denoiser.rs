//! Noise-prediction network eps_theta(A_hat; O, k) with noise-aware
//! conditioning: one time embedding per frame, fused with shared
//! observation features through feature-wise affine modulation.
//!
//! Frames are processed independently by a weight-shared per-frame trunk,
//! so output frame j depends only on (noisy[j], levels[j], obs, params).

use crate::error::{CoreError, Result};
use crate::numkit::{ParamStore, Tape, Tensor, Var};
use crate::schedule::LevelVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictKind {
    Noise,
    Action,
}

impl fmt::Display for PredictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictKind::Noise => write!(f, "noise"),
            PredictKind::Action => write!(f, "action"),
        }
    }
}

impl FromStr for PredictKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(PredictKind::Noise),
            "action" => Ok(PredictKind::Action),
            other => Err(CoreError::InvalidConfig(format!(
                "unknown prediction type {:?}",
                other
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Frame count; equals buffer capacity and diffusion level count.
    pub f: usize,
    /// Action dimension.
    pub c_a: usize,
    /// Observation dimension.
    pub c_state: usize,
    /// Stacked past observations per window.
    pub t_o: usize,
    /// Time-embedding width (even).
    pub c_emb: usize,
    /// Trunk width.
    pub hidden: usize,
    /// Number of FiLM blocks.
    pub depth: usize,
    pub predict: PredictKind,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_o < 1 {
            return Err(CoreError::InvalidConfig("t_o must be >= 1".into()));
        }
        if self.c_emb < 2 || self.c_emb % 2 != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "c_emb = {} must be even and >= 2",
                self.c_emb
            )));
        }
        if self.f < 1 || self.c_a < 1 || self.c_state < 1 || self.hidden < 1 || self.depth < 1 {
            return Err(CoreError::InvalidConfig("all extents must be >= 1".into()));
        }
        Ok(())
    }

    pub fn obs_input(&self) -> usize {
        self.t_o * self.c_state
    }

    /// Conditioning width per frame: time embedding + observation features.
    pub fn cond_width(&self) -> usize {
        2 * self.c_emb
    }
}

/// Result of a recorded forward pass; `params` maps names to tape leaves
/// so gradients can be read back after `Tape::backward`.
pub struct ForwardRecord {
    pub output: Var,
    pub param_vars: Vec<(String, Var)>,
}

/// Raw sinusoidal encoding of level k: first half sines, second half
/// cosines, geometric frequency ladder over 1e4.
pub fn sinusoid(k: usize, c_emb: usize) -> Vec<f64> {
    let half = c_emb / 2;
    let mut out = vec![0.0; c_emb];
    for i in 0..half {
        let exponent = if half > 1 { i as f64 / (half - 1) as f64 } else { 0.0 };
        let freq = 10_000f64.powf(-exponent);
        let arg = k as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// Fan-in uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn init_layer<R: Rng>(
    ps: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<()> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    let b: Vec<f64> = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    ps.insert(&format!("{}.w", name), Tensor::from_vec(&[fan_in, fan_out], w)?)?;
    ps.insert(&format!("{}.b", name), Tensor::from_vec(&[fan_out], b)?)?;
    Ok(())
}

/// Build a freshly initialized parameter store for `cfg`.
/// The layout (hence parameter count) does not depend on cfg.f.
pub fn init_params<R: Rng>(cfg: &DenoiserConfig, rng: &mut R) -> Result<ParamStore> {
    cfg.validate()?;
    let mut ps = ParamStore::new();
    init_layer(&mut ps, "time.l1", cfg.c_emb, cfg.c_emb, rng)?;
    init_layer(&mut ps, "time.l2", cfg.c_emb, cfg.c_emb, rng)?;
    init_layer(&mut ps, "obs.l1", cfg.obs_input(), cfg.c_emb, rng)?;
    init_layer(&mut ps, "obs.l2", cfg.c_emb, cfg.c_emb, rng)?;
    init_layer(&mut ps, "in", cfg.c_a, cfg.hidden, rng)?;
    for d in 0..cfg.depth {
        init_layer(&mut ps, &format!("blk{}.trunk", d), cfg.hidden, cfg.hidden, rng)?;
        init_layer(&mut ps, &format!("blk{}.gamma", d), cfg.cond_width(), cfg.hidden, rng)?;
        init_layer(&mut ps, &format!("blk{}.beta", d), cfg.cond_width(), cfg.hidden, rng)?;
    }
    init_layer(&mut ps, "head", cfg.hidden, cfg.c_a, rng)?;
    Ok(ps)
}

fn leaf_pair(
    tape: &mut Tape,
    params: &ParamStore,
    name: &str,
    vars: &mut Vec<(String, Var)>,
) -> Result<(Var, Var)> {
    let wname = format!("{}.w", name);
    let bname = format!("{}.b", name);
    let w = tape.leaf(params.get(&wname)?.clone());
    let b = tape.leaf(params.get(&bname)?.clone());
    vars.push((wname, w));
    vars.push((bname, b));
    Ok((w, b))
}

/// Record the batched forward pass on `tape`.
///
/// `noisy` is [B*f x c_a] with element b's frames at rows b*f..(b+1)*f,
/// `levels` one level vector per element, `obs` [B x t_o*c_state] with
/// the oldest observation first in each flattened window.
pub fn forward_batch(
    tape: &mut Tape,
    cfg: &DenoiserConfig,
    params: &ParamStore,
    noisy: &Tensor,
    levels: &[LevelVector],
    obs: &Tensor,
) -> Result<ForwardRecord> {
    let (rows, ca) = noisy.dims2()?;
    let (batch, obs_w) = obs.dims2()?;
    if ca != cfg.c_a || rows != batch * cfg.f || levels.len() != batch {
        return Err(CoreError::ShapeMismatch {
            op: "forward_batch",
            detail: format!(
                "noisy {:?}, obs {:?}, {} level vectors, cfg f={} c_a={}",
                noisy.shape(),
                obs.shape(),
                levels.len(),
                cfg.f,
                cfg.c_a
            ),
        });
    }
    if obs_w != cfg.obs_input() {
        return Err(CoreError::ShapeMismatch {
            op: "forward_batch",
            detail: format!("obs window width {} != t_o*c_state {}", obs_w, cfg.obs_input()),
        });
    }
    for lv in levels {
        if lv.len() != cfg.f {
            return Err(CoreError::ShapeMismatch {
                op: "forward_batch",
                detail: format!("level vector length {} != f {}", lv.len(), cfg.f),
            });
        }
        for &k in lv.levels() {
            if k > cfg.f {
                return Err(CoreError::LevelOutOfRange { level: k, max: cfg.f });
            }
        }
    }

    let mut vars = Vec::new();

    // sinusoid rows are constants; the MLP on top is differentiable
    let mut sin_rows = Vec::with_capacity(rows * cfg.c_emb);
    for lv in levels {
        for &k in lv.levels() {
            sin_rows.extend(sinusoid(k, cfg.c_emb));
        }
    }
    let sin = tape.leaf(Tensor::from_vec(&[rows, cfg.c_emb], sin_rows)?);
    let (tw1, tb1) = leaf_pair(tape, params, "time.l1", &mut vars)?;
    let (tw2, tb2) = leaf_pair(tape, params, "time.l2", &mut vars)?;
    let th = tape.affine(sin, tw1, tb1)?;
    let th = tape.mish(th);
    let temb = tape.affine(th, tw2, tb2)?;

    let obs_leaf = tape.leaf(obs.clone());
    let (ow1, ob1) = leaf_pair(tape, params, "obs.l1", &mut vars)?;
    let (ow2, ob2) = leaf_pair(tape, params, "obs.l2", &mut vars)?;
    let oh = tape.affine(obs_leaf, ow1, ob1)?;
    let oh = tape.mish(oh);
    let ofeat = tape.affine(oh, ow2, ob2)?;
    let ofeat_rows = tape.repeat_rows(ofeat, cfg.f)?;

    let cond = tape.concat_cols(temb, ofeat_rows)?;

    let noisy_leaf = tape.leaf(noisy.clone());
    let (iw, ib) = leaf_pair(tape, params, "in", &mut vars)?;
    let mut h = tape.affine(noisy_leaf, iw, ib)?;
    for d in 0..cfg.depth {
        let (tw, tb) = leaf_pair(tape, params, &format!("blk{}.trunk", d), &mut vars)?;
        let (gw, gb) = leaf_pair(tape, params, &format!("blk{}.gamma", d), &mut vars)?;
        let (bw, bb) = leaf_pair(tape, params, &format!("blk{}.beta", d), &mut vars)?;
        let t = tape.affine(h, tw, tb)?;
        let t = tape.mish(t);
        let gamma = tape.affine(cond, gw, gb)?;
        let beta = tape.affine(cond, bw, bb)?;
        let gt = tape.mul(gamma, t)?;
        h = tape.add(gt, beta)?;
        if !tape.value(h).all_finite() {
            return Err(CoreError::NonFinite(format!("denoiser block {}", d)));
        }
    }
    let (hw, hb) = leaf_pair(tape, params, "head", &mut vars)?;
    let out = tape.affine(h, hw, hb)?;
    tape.value(out).check_finite("denoiser head")?;

    Ok(ForwardRecord { output: out, param_vars: vars })
}

/// Inference-path forward for a single sequence: [f x c_a] in, [f x c_a] out.
pub fn forward_single(
    cfg: &DenoiserConfig,
    params: &ParamStore,
    noisy: &Tensor,
    levels: &LevelVector,
    obs_window: &Tensor,
) -> Result<Tensor> {
    let (t_o, c_state) = obs_window.dims2()?;
    if t_o != cfg.t_o || c_state != cfg.c_state {
        return Err(CoreError::ShapeMismatch {
            op: "forward_single",
            detail: format!(
                "obs window {:?} vs [{} x {}]",
                obs_window.shape(),
                cfg.t_o,
                cfg.c_state
            ),
        });
    }
    let obs = Tensor::from_vec(&[1, cfg.obs_input()], obs_window.data().to_vec())?;
    let mut tape = Tape::new();
    let rec = forward_batch(
        &mut tape,
        cfg,
        params,
        noisy,
        std::slice::from_ref(levels),
        &obs,
    )?;
    Ok(tape.value(rec.output).clone())
}

/// Full per-level time embedding: sinusoid(k) through the 2-layer mish MLP.
pub fn time_embed(cfg: &DenoiserConfig, params: &ParamStore, k: usize) -> Result<Tensor> {
    if k > cfg.f {
        return Err(CoreError::LevelOutOfRange { level: k, max: cfg.f });
    }
    let mut tape = Tape::new();
    let sin = tape.leaf(Tensor::from_vec(&[1, cfg.c_emb], sinusoid(k, cfg.c_emb))?);
    let w1 = tape.leaf(params.get("time.l1.w")?.clone());
    let b1 = tape.leaf(params.get("time.l1.b")?.clone());
    let w2 = tape.leaf(params.get("time.l2.w")?.clone());
    let b2 = tape.leaf(params.get("time.l2.b")?.clone());
    let h = tape.affine(sin, w1, b1)?;
    let h = tape.mish(h);
    let out = tape.affine(h, w2, b2)?;
    Ok(tape.value(out).clone())
}

/// Observation-window encoder: flattened window through the 2-layer mish MLP.
pub fn encode_obs(cfg: &DenoiserConfig, params: &ParamStore, obs_window: &Tensor) -> Result<Tensor> {
    if obs_window.len() != cfg.obs_input() {
        return Err(CoreError::ShapeMismatch {
            op: "encode_obs",
            detail: format!(
                "window holds {} values, expected {}",
                obs_window.len(),
                cfg.obs_input()
            ),
        });
    }
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(&[1, cfg.obs_input()], obs_window.data().to_vec())?);
    let w1 = tape.leaf(params.get("obs.l1.w")?.clone());
    let b1 = tape.leaf(params.get("obs.l1.b")?.clone());
    let w2 = tape.leaf(params.get("obs.l2.w")?.clone());
    let b2 = tape.leaf(params.get("obs.l2.b")?.clone());
    let h = tape.affine(x, w1, b1)?;
    let h = tape.mish(h);
    let out = tape.affine(h, w2, b2)?;
    Ok(tape.value(out).clone())
}
