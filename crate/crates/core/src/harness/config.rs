//! Flat key=value run configuration and content hashing.

use crate::denoiser::{DenoiserConfig, PredictKind};
use crate::error::{CoreError, Result};
use crate::schedule::{BetaKind, LevelMode};
use crate::trainer::TrainConfig;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Rnrdp,
    DpDdpm,
    DpDdim,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Rnrdp => write!(f, "rnrdp"),
            Method::DpDdpm => write!(f, "dp_ddpm"),
            Method::DpDdim => write!(f, "dp_ddim"),
        }
    }
}

impl FromStr for Method {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnrdp" => Ok(Method::Rnrdp),
            "dp_ddpm" => Ok(Method::DpDdpm),
            "dp_ddim" => Ok(Method::DpDdim),
            other => Err(CoreError::InvalidConfig(format!(
                "unknown method {:?}",
                other
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Laddering,
    PureNoise,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitKind::Laddering => write!(f, "laddering"),
            InitKind::PureNoise => write!(f, "pure_noise"),
        }
    }
}

impl FromStr for InitKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laddering" => Ok(InitKind::Laddering),
            "pure_noise" => Ok(InitKind::PureNoise),
            other => Err(CoreError::InvalidConfig(format!(
                "unknown init kind {:?}",
                other
            ))),
        }
    }
}

/// Everything one experiment needs: environment, method, model,
/// schedule, trainer, and evaluation protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env_id: String,
    pub method: Method,
    /// Buffer capacity / prediction horizon / diffusion level count.
    pub f: usize,
    /// Execution horizon for the dp methods.
    pub t_a: usize,
    /// DDPM denoise steps for dp_ddpm.
    pub k: usize,
    /// DDIM step count for dp_ddim.
    pub s: usize,
    pub t_o: usize,
    pub c_emb: usize,
    pub hidden: usize,
    pub depth: usize,
    pub predict: PredictKind,
    pub beta_kind: BetaKind,
    pub beta1: f64,
    pub beta_f: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub schedule_mode: LevelMode,
    pub train_seed: u64,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub demos: usize,
    pub demo_seed: u64,
    pub deterministic: bool,
    pub init: InitKind,
}

impl RunConfig {
    pub fn defaults(env_id: &str) -> Self {
        RunConfig {
            env_id: env_id.to_string(),
            method: Method::Rnrdp,
            f: 8,
            t_a: 8,
            k: 8,
            s: 8,
            t_o: 2,
            c_emb: 32,
            hidden: 128,
            depth: 3,
            predict: PredictKind::Noise,
            beta_kind: BetaKind::CosineBeta,
            beta1: 1e-4,
            beta_f: 0.5,
            steps: 6000,
            batch: 32,
            lr: 3e-4,
            warmup: 100,
            weight_decay: 1e-6,
            ema_decay: 0.999,
            schedule_mode: LevelMode::Mixture { p_linear: 0.4 },
            train_seed: 0,
            episodes: 100,
            seeds: vec![0, 1, 2, 3, 4],
            demos: 400,
            demo_seed: 7,
            deterministic: false,
            init: InitKind::Laddering,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser_config(2, 2).validate()?;
        self.train_config().validate()?;
        if self.t_a < 1 || self.t_a > self.f {
            return Err(CoreError::InvalidConfig(format!(
                "t_a {} outside 1..={}",
                self.t_a, self.f
            )));
        }
        if self.episodes < 1 || self.seeds.is_empty() {
            return Err(CoreError::InvalidConfig(
                "need episodes >= 1 and at least one seed".into(),
            ));
        }
        Ok(())
    }

    pub fn denoiser_config(&self, c_state: usize, c_a: usize) -> DenoiserConfig {
        DenoiserConfig {
            f: self.f,
            c_a,
            c_state,
            t_o: self.t_o,
            c_emb: self.c_emb,
            hidden: self.hidden,
            depth: self.depth,
            predict: self.predict,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            warmup: self.warmup,
            weight_decay: self.weight_decay,
            ema_decay: self.ema_decay,
            schedule_mode: self.schedule_mode,
            seed: self.train_seed,
        }
    }

    /// Canonical text form: fixed key order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut s = String::new();
        for (k, v) in [
            ("env", self.env_id.clone()),
            ("method", self.method.to_string()),
            ("f", self.f.to_string()),
            ("t_a", self.t_a.to_string()),
            ("k", self.k.to_string()),
            ("s", self.s.to_string()),
            ("t_o", self.t_o.to_string()),
            ("c_emb", self.c_emb.to_string()),
            ("hidden", self.hidden.to_string()),
            ("depth", self.depth.to_string()),
            ("predict", self.predict.to_string()),
            ("beta_kind", self.beta_kind.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta_f", self.beta_f.to_string()),
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("lr", self.lr.to_string()),
            ("warmup", self.warmup.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("ema_decay", self.ema_decay.to_string()),
            ("schedule_mode", self.schedule_mode.to_string()),
            ("train_seed", self.train_seed.to_string()),
            ("episodes", self.episodes.to_string()),
            ("seeds", seeds.join(",")),
            ("demos", self.demos.to_string()),
            ("demo_seed", self.demo_seed.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("init", self.init.to_string()),
        ] {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Parse flat `key = value` text with `#` comments. Unknown or
    /// duplicate keys are rejected; missing keys take defaults from the
    /// env named in the file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: HashMap<&str, &str> = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CoreError::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if kv.insert(k, v).is_some() {
                return Err(CoreError::InvalidConfig(format!(
                    "duplicate key {:?}",
                    k
                )));
            }
        }
        let env_id = kv
            .get("env")
            .copied()
            .ok_or_else(|| CoreError::InvalidConfig("missing key 'env'".into()))?;
        let mut cfg = RunConfig::defaults(env_id);
        let known = [
            "env", "method", "f", "t_a", "k", "s", "t_o", "c_emb", "hidden", "depth",
            "predict", "beta_kind", "beta1", "beta_f", "steps", "batch", "lr", "warmup",
            "weight_decay", "ema_decay", "schedule_mode", "train_seed", "episodes", "seeds",
            "demos", "demo_seed", "deterministic", "init",
        ];
        for k in kv.keys() {
            if !known.contains(k) {
                return Err(CoreError::InvalidConfig(format!("unknown key {:?}", k)));
            }
        }
        fn num<T: FromStr>(kv: &HashMap<&str, &str>, key: &str, out: &mut T) -> Result<()>
        where
            T::Err: fmt::Display,
        {
            if let Some(v) = kv.get(key) {
                *out = v.parse().map_err(|e| {
                    CoreError::InvalidConfig(format!("key {:?}: {}", key, e))
                })?;
            }
            Ok(())
        }
        num(&kv, "method", &mut cfg.method)?;
        num(&kv, "f", &mut cfg.f)?;
        num(&kv, "t_a", &mut cfg.t_a)?;
        num(&kv, "k", &mut cfg.k)?;
        num(&kv, "s", &mut cfg.s)?;
        num(&kv, "t_o", &mut cfg.t_o)?;
        num(&kv, "c_emb", &mut cfg.c_emb)?;
        num(&kv, "hidden", &mut cfg.hidden)?;
        num(&kv, "depth", &mut cfg.depth)?;
        num(&kv, "predict", &mut cfg.predict)?;
        num(&kv, "beta_kind", &mut cfg.beta_kind)?;
        num(&kv, "beta1", &mut cfg.beta1)?;
        num(&kv, "beta_f", &mut cfg.beta_f)?;
        num(&kv, "steps", &mut cfg.steps)?;
        num(&kv, "batch", &mut cfg.batch)?;
        num(&kv, "lr", &mut cfg.lr)?;
        num(&kv, "warmup", &mut cfg.warmup)?;
        num(&kv, "weight_decay", &mut cfg.weight_decay)?;
        num(&kv, "ema_decay", &mut cfg.ema_decay)?;
        num(&kv, "schedule_mode", &mut cfg.schedule_mode)?;
        num(&kv, "train_seed", &mut cfg.train_seed)?;
        num(&kv, "episodes", &mut cfg.episodes)?;
        num(&kv, "demos", &mut cfg.demos)?;
        num(&kv, "demo_seed", &mut cfg.demo_seed)?;
        num(&kv, "deterministic", &mut cfg.deterministic)?;
        num(&kv, "init", &mut cfg.init)?;
        if let Some(v) = kv.get("seeds") {
            cfg.seeds = v
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|e| {
                        CoreError::InvalidConfig(format!("key \"seeds\": {}", e))
                    })
                })
                .collect::<Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of the full canonical config. Key order of the source text
    /// cannot influence this because parsing normalizes it.
    pub fn config_hash(&self) -> String {
        hex16(&self.to_text())
    }

    /// Canonical text of the training-relevant subset (what a cached
    /// checkpoint depends on). Evaluation settings are excluded.
    pub fn train_text(&self) -> String {
        let full = self.to_text();
        let eval_keys = ["method", "t_a", "k", "s", "episodes", "seeds", "deterministic", "init"];
        full.lines()
            .filter(|l| {
                let key = l.split(" = ").next().unwrap_or("");
                !eval_keys.contains(&key)
            })
            .map(|l| format!("{}\n", l))
            .collect()
    }

    /// Hash keying the checkpoint cache.
    pub fn train_hash(&self) -> String {
        hex16(&self.train_text())
    }
}

fn hex16(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{:02x}", b)).collect()
}
