//! Demonstration datasets: scripted-expert generation, normalization
//! statistics, and the RNRDEMO1 binary file format.

use super::{make_env, BimodalReach, DriftPush, Env};
use crate::env::bimodal::Mode;
use crate::error::{CoreError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RNRDEMO1";
const VERSION: u32 = 1;

/// One successful expert episode. Values are quantized through f32 at
/// generation time so the on-disk payload round-trips bitwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// T x obs_dim, row-major, observation before each action.
    pub obs: Vec<f64>,
    /// T x act_dim, row-major.
    pub actions: Vec<f64>,
    pub steps: usize,
    pub mode_tag: u8,
}

/// Per-dimension min/max used to map values into [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub obs_min: Vec<f64>,
    pub obs_max: Vec<f64>,
    pub act_min: Vec<f64>,
    pub act_max: Vec<f64>,
}

const GUARD: f64 = 1e-8;
/// Dimensions whose data range is below this carry no information;
/// they map to 0 so that tiny quantization offsets between raw values
/// and stored f32 statistics cannot blow up after division.
const MIN_RANGE: f64 = 1e-6;

fn norm_one(v: f64, lo: f64, hi: f64) -> f64 {
    if hi - lo < MIN_RANGE {
        return 0.0;
    }
    2.0 * (v - lo) / (hi - lo + GUARD) - 1.0
}

impl NormStats {
    pub fn obs_dim(&self) -> usize {
        self.obs_min.len()
    }

    pub fn act_dim(&self) -> usize {
        self.act_min.len()
    }

    pub fn norm_obs(&self, raw: &[f64], out: &mut Vec<f64>) {
        let d = self.obs_dim();
        for (i, &v) in raw.iter().enumerate() {
            out.push(norm_one(v, self.obs_min[i % d], self.obs_max[i % d]));
        }
    }

    pub fn norm_act(&self, raw: &[f64]) -> Vec<f64> {
        let d = self.act_dim();
        raw.iter()
            .enumerate()
            .map(|(i, &v)| norm_one(v, self.act_min[i % d], self.act_max[i % d]))
            .collect()
    }

    pub fn denorm_act(&self, normed: &[f64]) -> Vec<f64> {
        let d = self.act_dim();
        normed
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi) = (self.act_min[i % d], self.act_max[i % d]);
                (v + 1.0) / 2.0 * (hi - lo + GUARD) + lo
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub env_id: String,
    pub episodes: Vec<Episode>,
    pub norm_stats: NormStats,
}

impl DemoDataset {
    pub fn obs_dim(&self) -> usize {
        self.norm_stats.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.norm_stats.act_dim()
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps).sum()
    }
}

fn q(v: f64) -> f64 {
    v as f32 as f64
}

/// Run the scripted expert, keep only successes, compute norm stats.
/// Aborts if the expert success rate during generation drops below 0.9.
pub fn gen_demos(env_id: &str, n_episodes: usize, seed: u64) -> Result<DemoDataset> {
    if n_episodes == 0 {
        return Err(CoreError::InvalidConfig("n_episodes must be >= 1".into()));
    }
    // probe dims up front
    let probe = make_env(env_id)?;
    let (obs_dim, act_dim) = (probe.obs_dim(), probe.action_dim());
    drop(probe);

    let mut mode_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f6465);
    let mut episodes = Vec::with_capacity(n_episodes);
    let mut attempts = 0usize;
    let mut failures = 0usize;
    let mut ep_seed = seed;
    while episodes.len() < n_episodes {
        attempts += 1;
        let (episode, success) = match env_id {
            "bimodal_reach" => {
                let mode = if mode_rng.gen::<bool>() { Mode::Right } else { Mode::Left };
                run_bimodal_expert(ep_seed, mode)
            }
            "drift_push" => run_driftpush_expert(ep_seed),
            other => {
                return Err(CoreError::InvalidConfig(format!(
                    "unknown env id {:?}",
                    other
                )))
            }
        }?;
        ep_seed = ep_seed.wrapping_add(1);
        if success {
            episodes.push(episode);
        } else {
            failures += 1;
        }
        if attempts >= 20 && (failures as f64) / (attempts as f64) > 0.1 {
            return Err(CoreError::Env {
                step: attempts,
                msg: format!(
                    "expert regression: {}/{} generation episodes failed",
                    failures, attempts
                ),
            });
        }
    }

    let mut stats = NormStats {
        obs_min: vec![f64::INFINITY; obs_dim],
        obs_max: vec![f64::NEG_INFINITY; obs_dim],
        act_min: vec![f64::INFINITY; act_dim],
        act_max: vec![f64::NEG_INFINITY; act_dim],
    };
    for ep in &episodes {
        for (i, &v) in ep.obs.iter().enumerate() {
            let d = i % obs_dim;
            stats.obs_min[d] = stats.obs_min[d].min(v);
            stats.obs_max[d] = stats.obs_max[d].max(v);
        }
        for (i, &v) in ep.actions.iter().enumerate() {
            let d = i % act_dim;
            stats.act_min[d] = stats.act_min[d].min(v);
            stats.act_max[d] = stats.act_max[d].max(v);
        }
    }
    // stats live in f32 on disk; quantize now so round-trips are exact
    for arr in [
        &mut stats.obs_min,
        &mut stats.obs_max,
        &mut stats.act_min,
        &mut stats.act_max,
    ] {
        for v in arr.iter_mut() {
            *v = q(*v);
        }
    }

    Ok(DemoDataset {
        env_id: env_id.to_string(),
        episodes,
        norm_stats: stats,
    })
}

/// Exploration noise injected into executed demo actions. The recorded
/// label stays the expert's clean action, so the data teaches recovery
/// from the off-expert states the noise visits.
const DEMO_NOISE: f64 = 0.2;

fn run_bimodal_expert(seed: u64, mode: Mode) -> Result<(Episode, bool)> {
    let mut env = BimodalReach::new();
    let mut obs = env.reset(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x64656d6f);
    let mut ep = Episode {
        obs: Vec::new(),
        actions: Vec::new(),
        steps: 0,
        mode_tag: match mode {
            Mode::Left => 0,
            Mode::Right => 1,
        },
    };
    while !env.done() {
        let a = env.expert_action(mode);
        ep.obs.extend(obs.iter().map(|&v| q(v)));
        ep.actions.extend(a.iter().map(|&v| q(v)));
        ep.steps += 1;
        let executed: Vec<f64> = a
            .iter()
            .map(|&v| {
                let n: f64 = noise_rng.sample(rand_distr::StandardNormal);
                (v + DEMO_NOISE * n).clamp(-1.0, 1.0)
            })
            .collect();
        obs = env.step(&executed)?.obs;
    }
    Ok((ep, env.success()))
}

fn run_driftpush_expert(seed: u64) -> Result<(Episode, bool)> {
    let mut env = DriftPush::new();
    let mut obs = env.reset(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x64656d6f);
    let mut ep = Episode {
        obs: Vec::new(),
        actions: Vec::new(),
        steps: 0,
        mode_tag: 0,
    };
    while !env.done() {
        let a = env.expert_action();
        ep.obs.extend(obs.iter().map(|&v| q(v)));
        ep.actions.extend(a.iter().map(|&v| q(v)));
        ep.steps += 1;
        let executed: Vec<f64> = a
            .iter()
            .map(|&v| {
                let n: f64 = noise_rng.sample(rand_distr::StandardNormal);
                (v + DEMO_NOISE * n).clamp(-1.0, 1.0)
            })
            .collect();
        obs = env.step(&executed)?.obs;
    }
    Ok((ep, env.success()))
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u16(&mut self, v: u16) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.inner.write_all(&[v])?;
        Ok(())
    }
    fn f32s(&mut self, vals: impl Iterator<Item = f64>) -> Result<()> {
        for v in vals {
            self.inner.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
    pub offset: usize,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Reader { inner, offset: 0 }
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        let at = self.offset;
        self.inner.read_exact(&mut buf).map_err(|_| CoreError::Format {
            offset: at,
            msg: format!("truncated while reading {}", what),
        })?;
        self.offset += n;
        Ok(buf)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.bytes(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.bytes(4 * n, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

pub fn save_demos(ds: &DemoDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = Writer { inner: std::io::BufWriter::new(file) };
    w.inner.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u16(ds.env_id.len() as u16)?;
    w.inner.write_all(ds.env_id.as_bytes())?;
    w.u32(ds.episodes.len() as u32)?;
    w.u32(ds.obs_dim() as u32)?;
    w.u32(ds.act_dim() as u32)?;
    for arr in [
        &ds.norm_stats.obs_min,
        &ds.norm_stats.obs_max,
        &ds.norm_stats.act_min,
        &ds.norm_stats.act_max,
    ] {
        w.f32s(arr.iter().copied())?;
    }
    for ep in &ds.episodes {
        w.u32(ep.steps as u32)?;
        w.u8(ep.mode_tag)?;
        w.f32s(ep.obs.iter().copied())?;
        w.f32s(ep.actions.iter().copied())?;
    }
    w.inner.flush()?;
    Ok(())
}

pub fn load_demos(path: &Path) -> Result<DemoDataset> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader::new(std::io::BufReader::new(file));
    let magic = r.bytes(8, "magic")?;
    if magic != MAGIC {
        return Err(CoreError::Format { offset: 0, msg: "bad magic".into() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CoreError::Format {
            offset: 8,
            msg: format!("unsupported version {}", version),
        });
    }
    let id_len = r.u16("env_id length")? as usize;
    let id_bytes = r.bytes(id_len, "env_id")?;
    let env_id = String::from_utf8(id_bytes).map_err(|_| CoreError::Format {
        offset: 14,
        msg: "env_id is not utf-8".into(),
    })?;
    let n_episodes = r.u32("episode count")? as usize;
    let obs_dim = r.u32("obs dim")? as usize;
    let act_dim = r.u32("act dim")? as usize;
    let obs_min = r.f32s(obs_dim, "obs_min")?;
    let obs_max = r.f32s(obs_dim, "obs_max")?;
    let act_min = r.f32s(act_dim, "act_min")?;
    let act_max = r.f32s(act_dim, "act_max")?;
    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let steps = r.u32("step count")? as usize;
        let mode_tag = r.u8("mode tag")?;
        let obs = r.f32s(steps * obs_dim, "obs payload")?;
        let actions = r.f32s(steps * act_dim, "action payload")?;
        episodes.push(Episode { obs, actions, steps, mode_tag });
    }
    Ok(DemoDataset {
        env_id,
        episodes,
        norm_stats: NormStats { obs_min, obs_max, act_min, act_max },
    })
}
