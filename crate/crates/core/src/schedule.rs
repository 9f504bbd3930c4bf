//! DDPM coefficient tables generalized to per-frame noise levels,
//! plus the training-time level samplers.

use crate::error::{CoreError, Result};
use crate::numkit::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaKind {
    LinearBeta,
    CosineBeta,
}

impl fmt::Display for BetaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaKind::LinearBeta => write!(f, "linear_beta"),
            BetaKind::CosineBeta => write!(f, "cosine_beta"),
        }
    }
}

impl FromStr for BetaKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_beta" => Ok(BetaKind::LinearBeta),
            "cosine_beta" => Ok(BetaKind::CosineBeta),
            other => Err(CoreError::InvalidConfig(format!(
                "unknown beta kind {:?}",
                other
            ))),
        }
    }
}

/// beta/alpha/alpha_bar tables over f discrete noise levels.
/// Level 0 is clean; levels are 1-based everywhere in the API.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    f: usize,
    beta: Vec<f64>,      // beta[k-1] for k = 1..=f
    alpha: Vec<f64>,     // 1 - beta
    alpha_bar: Vec<f64>, // alpha_bar[k] for k = 0..=f, alpha_bar[0] = 1
}

impl NoiseSchedule {
    pub fn levels(&self) -> usize {
        self.f
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k]
    }

    pub fn beta_table(&self) -> &[f64] {
        &self.beta
    }

    fn validate(&self) -> Result<()> {
        let f = self.f;
        if self.beta[0] <= 0.0 || self.beta[f - 1] >= 1.0 || self.beta[0] > self.beta[f - 1] {
            return Err(CoreError::InvalidConfig(format!(
                "beta bounds out of range: beta1={}, betaF={}",
                self.beta[0],
                self.beta[f - 1]
            )));
        }
        for w in self.beta.windows(2) {
            if w[1] < w[0] {
                return Err(CoreError::InvalidConfig("beta must be non-decreasing".into()));
            }
        }
        if self.alpha_bar[0] != 1.0 || self.alpha_bar[f] <= 0.0 {
            return Err(CoreError::InvalidConfig("alpha_bar endpoints invalid".into()));
        }
        for w in self.alpha_bar.windows(2) {
            if w[1] >= w[0] {
                return Err(CoreError::InvalidConfig(
                    "alpha_bar must be strictly decreasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Build the coefficient tables from beta increments.
pub fn build_schedule(f: usize, kind: BetaKind, beta1: f64, beta_f: f64) -> Result<NoiseSchedule> {
    if f < 2 {
        return Err(CoreError::InvalidConfig(format!("f = {} must be >= 2", f)));
    }
    if !(beta1 > 0.0 && beta1 <= beta_f && beta_f < 1.0) {
        return Err(CoreError::InvalidConfig(format!(
            "require 0 < beta1 <= betaF < 1, got ({}, {})",
            beta1, beta_f
        )));
    }
    let beta: Vec<f64> = match kind {
        BetaKind::LinearBeta => (1..=f)
            .map(|k| beta1 + (beta_f - beta1) * (k - 1) as f64 / (f - 1) as f64)
            .collect(),
        BetaKind::CosineBeta => {
            // squared-cosine alpha_bar profile, beta clipped to [1e-6, 0.999]
            let s = 0.008;
            let profile = |k: f64| {
                let x = (k / f as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            (1..=f)
                .map(|k| {
                    let b = 1.0 - profile(k as f64) / profile(k as f64 - 1.0);
                    b.clamp(1e-6, 0.999)
                })
                .collect()
        }
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(f + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let sched = NoiseSchedule { f, beta, alpha, alpha_bar };
    sched.validate()?;
    Ok(sched)
}

/// Per-frame noise levels k[j] in 0..=f for f frame positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelVector(Vec<usize>);

impl LevelVector {
    pub fn new(levels: Vec<usize>) -> Self {
        LevelVector(levels)
    }

    /// The ladder [1, 2, ..., f].
    pub fn linear(f: usize) -> Self {
        LevelVector((1..=f).collect())
    }

    pub fn is_linear(&self) -> bool {
        self.0.iter().enumerate().all(|(j, &k)| k == j + 1)
    }

    pub fn levels(&self) -> &[usize] {
        &self.0
    }

    pub fn levels_mut(&mut self) -> &mut [usize] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Training-time level sampler modes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LevelMode {
    /// One shared k ~ U{1..f} for all frames (vanilla DP training).
    Uniform,
    /// k[j] = j + 1.
    Linear,
    /// i.i.d. k[j] ~ U{1..f}.
    Random,
    /// Linear with probability p_linear, else random, per batch element.
    Mixture { p_linear: f64 },
    /// Equal chunks sharing a level, levels increasing across chunks.
    Chunkwise { chunks: usize },
}

impl fmt::Display for LevelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelMode::Uniform => write!(f, "uniform"),
            LevelMode::Linear => write!(f, "linear"),
            LevelMode::Random => write!(f, "random"),
            LevelMode::Mixture { p_linear } => write!(f, "mixture({})", p_linear),
            LevelMode::Chunkwise { chunks } => write!(f, "chunkwise({})", chunks),
        }
    }
}

impl FromStr for LevelMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || CoreError::InvalidConfig(format!("unknown level mode {:?}", s));
        match s {
            "uniform" => Ok(LevelMode::Uniform),
            "linear" => Ok(LevelMode::Linear),
            "random" => Ok(LevelMode::Random),
            _ => {
                if let Some(inner) = s.strip_prefix("mixture(").and_then(|r| r.strip_suffix(')')) {
                    let p: f64 = inner.parse().map_err(|_| bad())?;
                    Ok(LevelMode::Mixture { p_linear: p })
                } else if let Some(inner) =
                    s.strip_prefix("chunkwise(").and_then(|r| r.strip_suffix(')'))
                {
                    let c: usize = inner.parse().map_err(|_| bad())?;
                    Ok(LevelMode::Chunkwise { chunks: c })
                } else {
                    Err(bad())
                }
            }
        }
    }
}

/// Draw a level vector for one batch element.
pub fn sample_levels<R: Rng>(mode: LevelMode, f: usize, rng: &mut R) -> Result<LevelVector> {
    match mode {
        LevelMode::Uniform => {
            let k = rng.gen_range(1..=f);
            Ok(LevelVector(vec![k; f]))
        }
        LevelMode::Linear => Ok(LevelVector::linear(f)),
        LevelMode::Random => Ok(LevelVector((0..f).map(|_| rng.gen_range(1..=f)).collect())),
        LevelMode::Mixture { p_linear } => {
            if !(0.0..=1.0).contains(&p_linear) {
                return Err(CoreError::InvalidConfig(format!(
                    "p_linear = {} outside [0, 1]",
                    p_linear
                )));
            }
            if rng.gen::<f64>() < p_linear {
                Ok(LevelVector::linear(f))
            } else {
                sample_levels(LevelMode::Random, f, rng)
            }
        }
        LevelMode::Chunkwise { chunks } => {
            if chunks == 0 || chunks > f {
                return Err(CoreError::InvalidConfig(format!(
                    "chunks = {} outside 1..={}",
                    chunks, f
                )));
            }
            let mut levels = Vec::with_capacity(f);
            for c in 0..chunks {
                let level = (c + 1) * f / chunks;
                let start = c * f / chunks;
                let end = (c + 1) * f / chunks;
                levels.extend(std::iter::repeat(level).take(end - start));
            }
            Ok(LevelVector(levels))
        }
    }
}

/// Forward perturbation: a_hat[j] = sqrt(abar_{k_j}) a[j] + sqrt(1 - abar_{k_j}) eps[j].
/// Frames with k[j] = 0 are returned unchanged.
pub fn perturb(
    actions: &Tensor,
    k: &LevelVector,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    let (f, ca) = actions.dims2()?;
    if k.len() != f || eps.shape() != actions.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "perturb",
            detail: format!(
                "actions {:?}, levels {}, eps {:?}",
                actions.shape(),
                k.len(),
                eps.shape()
            ),
        });
    }
    let mut out = actions.clone();
    for j in 0..f {
        let level = k.levels()[j];
        if level > sched.levels() {
            return Err(CoreError::LevelOutOfRange { level, max: sched.levels() });
        }
        let abar = sched.alpha_bar(level);
        let (sa, se) = (abar.sqrt(), (1.0 - abar).sqrt());
        for c in 0..ca {
            out.set2(j, c, sa * actions.at2(j, c) + se * eps.at2(j, c));
        }
    }
    Ok(out)
}

/// One DDPM reverse step for a single frame at level k >= 1.
/// sigma_k^2 = beta_k (1 - abar_{k-1}) / (1 - abar_k), sigma_1 = 0.
pub fn reverse_step(
    a_k: &[f64],
    eps_pred: &[f64],
    k: usize,
    z: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(CoreError::LevelOutOfRange { level: 0, max: sched.levels() });
    }
    if k > sched.levels() {
        return Err(CoreError::LevelOutOfRange { level: k, max: sched.levels() });
    }
    if a_k.len() != eps_pred.len() || a_k.len() != z.len() {
        return Err(CoreError::ShapeMismatch {
            op: "reverse_step",
            detail: format!("{} / {} / {}", a_k.len(), eps_pred.len(), z.len()),
        });
    }
    let beta = sched.beta(k);
    let alpha = sched.alpha(k);
    let abar = sched.alpha_bar(k);
    let abar_prev = sched.alpha_bar(k - 1);
    let coef = beta / (1.0 - abar).sqrt();
    let sigma = if k == 1 {
        0.0
    } else {
        (beta * (1.0 - abar_prev) / (1.0 - abar)).sqrt()
    };
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    Ok(a_k
        .iter()
        .zip(eps_pred)
        .zip(z)
        .map(|((&a, &e), &n)| inv_sqrt_alpha * (a - coef * e) + sigma * n)
        .collect())
}

/// Deterministic (eta = 0) DDIM step from level k to k_prev < k.
pub fn ddim_step(
    a_k: &[f64],
    eps_pred: &[f64],
    k: usize,
    k_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if k_prev >= k {
        return Err(CoreError::InvalidConfig(format!(
            "ddim_step needs k_prev < k, got {} >= {}",
            k_prev, k
        )));
    }
    if k > sched.levels() {
        return Err(CoreError::LevelOutOfRange { level: k, max: sched.levels() });
    }
    let abar = sched.alpha_bar(k);
    let abar_prev = sched.alpha_bar(k_prev);
    let (sa, se) = (abar.sqrt(), (1.0 - abar).sqrt());
    let (pa, pe) = (abar_prev.sqrt(), (1.0 - abar_prev).sqrt());
    Ok(a_k
        .iter()
        .zip(eps_pred)
        .map(|(&a, &e)| {
            let x0 = (a - se * e) / sa;
            pa * x0 + pe * e
        })
        .collect())
}
