//! RNRCKPT1 checkpoint format: config snapshot, schedule, norm stats,
//! and named f32 parameter arrays (raw and EMA).

use super::config::RunConfig;
use crate::env::demos::{NormStats, Reader};
use crate::error::{CoreError, Result};
use crate::numkit::{ParamStore, Tensor};
use crate::schedule::{build_schedule, BetaKind, NoiseSchedule};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 8] = b"RNRCKPT1";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub config: RunConfig,
    pub sched: NoiseSchedule,
    pub norm_stats: NormStats,
    pub params: ParamStore,
    pub ema: ParamStore,
}

impl Checkpoint {
    /// Quantize every parameter through f32, matching what a save/load
    /// round trip will produce.
    pub fn quantize(&mut self) {
        for store in [&mut self.params, &mut self.ema] {
            for (_, p, _) in store.iter_mut() {
                for v in p.data_mut() {
                    *v = *v as f32 as f64;
                }
            }
        }
    }
}

fn write_store<W: Write>(w: &mut W, prefix: &str, store: &ParamStore) -> Result<()> {
    for (name, p, _) in store.iter() {
        let full = format!("{}{}", prefix, name);
        w.write_all(&(full.len() as u16).to_le_bytes())?;
        w.write_all(full.as_bytes())?;
        w.write_all(&[p.shape().len() as u8])?;
        for &d in p.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in p.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg_text = ckpt.config.to_text();
    w.write_all(&(cfg_text.len() as u32).to_le_bytes())?;
    w.write_all(cfg_text.as_bytes())?;
    // schedule is rebuilt from its generating triple
    let kind = match ckpt.config.beta_kind {
        BetaKind::LinearBeta => 0u8,
        BetaKind::CosineBeta => 1u8,
    };
    w.write_all(&[kind])?;
    w.write_all(&(ckpt.sched.levels() as u32).to_le_bytes())?;
    w.write_all(&ckpt.config.beta1.to_le_bytes())?;
    w.write_all(&ckpt.config.beta_f.to_le_bytes())?;
    let ns = &ckpt.norm_stats;
    w.write_all(&(ns.obs_dim() as u32).to_le_bytes())?;
    w.write_all(&(ns.act_dim() as u32).to_le_bytes())?;
    for arr in [&ns.obs_min, &ns.obs_max, &ns.act_min, &ns.act_max] {
        for &v in arr.iter() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    let count = ckpt.params.len() + ckpt.ema.len();
    w.write_all(&(count as u32).to_le_bytes())?;
    write_store(&mut w, "raw.", &ckpt.params)?;
    write_store(&mut w, "ema.", &ckpt.ema)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
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
    let cfg_len = r.u32("config length")? as usize;
    let cfg_bytes = r.bytes(cfg_len, "config snapshot")?;
    let cfg_text = String::from_utf8(cfg_bytes).map_err(|_| CoreError::Format {
        offset: 16,
        msg: "config snapshot is not utf-8".into(),
    })?;
    let config = RunConfig::parse(&cfg_text)?;
    let kind = match r.u8("beta kind")? {
        0 => BetaKind::LinearBeta,
        1 => BetaKind::CosineBeta,
        other => {
            return Err(CoreError::Format {
                offset: r.offset,
                msg: format!("unknown beta kind tag {}", other),
            })
        }
    };
    let levels = r.u32("schedule levels")? as usize;
    let beta1 = f64::from_le_bytes(r.bytes(8, "beta1")?.try_into().unwrap());
    let beta_f = f64::from_le_bytes(r.bytes(8, "beta_f")?.try_into().unwrap());
    let sched = build_schedule(levels, kind, beta1, beta_f)?;
    let obs_dim = r.u32("obs dim")? as usize;
    let act_dim = r.u32("act dim")? as usize;
    let norm_stats = NormStats {
        obs_min: r.f32s(obs_dim, "obs_min")?,
        obs_max: r.f32s(obs_dim, "obs_max")?,
        act_min: r.f32s(act_dim, "act_min")?,
        act_max: r.f32s(act_dim, "act_max")?,
    };
    let count = r.u32("array count")? as usize;
    let mut params = ParamStore::new();
    let mut ema = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u16("array name length")? as usize;
        let name_bytes = r.bytes(name_len, "array name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| CoreError::Format {
            offset: r.offset,
            msg: "array name is not utf-8".into(),
        })?;
        let rank = r.u8("array rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("array dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let data = r.f32s(n, "array payload")?;
        let tensor = Tensor::from_vec(&shape, data)?;
        if let Some(rest) = name.strip_prefix("raw.") {
            params.insert(rest, tensor)?;
        } else if let Some(rest) = name.strip_prefix("ema.") {
            ema.insert(rest, tensor)?;
        } else {
            return Err(CoreError::Format {
                offset: r.offset,
                msg: format!("array {:?} lacks raw./ema. prefix", name),
            });
        }
    }
    Ok(Checkpoint { config, sched, norm_stats, params, ema })
}
