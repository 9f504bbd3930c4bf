//! Ablation suites: vary one axis of a base config, train or reuse a
//! cached checkpoint per cell, and evaluate.

use super::config::{InitKind, RunConfig};
use super::eval::{evaluate, train_or_load, EvalReport};
use crate::error::{CoreError, Result};
use crate::schedule::LevelMode;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Scheme,
    Init,
    Predict,
    Capacity,
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Suite::Scheme => write!(f, "scheme"),
            Suite::Init => write!(f, "init"),
            Suite::Predict => write!(f, "predict"),
            Suite::Capacity => write!(f, "capacity"),
        }
    }
}

impl FromStr for Suite {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scheme" => Ok(Suite::Scheme),
            "init" => Ok(Suite::Init),
            "predict" => Ok(Suite::Predict),
            "capacity" => Ok(Suite::Capacity),
            other => Err(CoreError::InvalidConfig(format!(
                "unknown suite {:?}",
                other
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblateRow {
    pub suite: Suite,
    pub variant: String,
    pub config_hash: String,
    pub report: EvalReport,
}

fn cell_configs(suite: Suite, base: &RunConfig, capacity_grid: &[usize]) -> Result<Vec<(String, RunConfig)>> {
    let mut cells = Vec::new();
    match suite {
        Suite::Scheme => {
            let modes = [
                LevelMode::Linear,
                LevelMode::Random,
                LevelMode::Mixture { p_linear: 0.4 },
                LevelMode::Mixture { p_linear: 0.33 },
                LevelMode::Chunkwise { chunks: 2 },
            ];
            for mode in modes {
                let mut cfg = base.clone();
                cfg.schedule_mode = mode;
                cells.push((mode.to_string(), cfg));
            }
        }
        Suite::Init => {
            for init in [InitKind::Laddering, InitKind::PureNoise] {
                let mut cfg = base.clone();
                cfg.init = init;
                cells.push((init.to_string(), cfg));
            }
        }
        Suite::Predict => {
            use crate::denoiser::PredictKind;
            for kind in [PredictKind::Noise, PredictKind::Action] {
                let mut cfg = base.clone();
                cfg.predict = kind;
                cells.push((kind.to_string(), cfg));
            }
        }
        Suite::Capacity => {
            if capacity_grid.is_empty() {
                return Err(CoreError::InvalidConfig(
                    "capacity suite needs a nonempty f grid".into(),
                ));
            }
            let mut grid = capacity_grid.to_vec();
            grid.sort_unstable();
            grid.dedup();
            for f in grid {
                let mut cfg = base.clone();
                cfg.f = f;
                cfg.t_a = cfg.t_a.min(f);
                cfg.k = f;
                cfg.s = cfg.s.min(f);
                cells.push((f.to_string(), cfg));
            }
        }
    }
    Ok(cells)
}

/// Run one suite. Cells sharing a training config reuse the same cached
/// checkpoint under `cache_dir`.
pub fn ablate(
    suite: Suite,
    base: &RunConfig,
    capacity_grid: &[usize],
    cache_dir: &Path,
) -> Result<Vec<AblateRow>> {
    let mut rows = Vec::new();
    for (variant, cfg) in cell_configs(suite, base, capacity_grid)? {
        let ckpt = train_or_load(&cfg, cache_dir)?;
        let report = evaluate(&ckpt)?;
        rows.push(AblateRow {
            suite,
            variant,
            config_hash: cfg.config_hash(),
            report,
        });
    }
    Ok(rows)
}

pub fn write_ablate_csv(path: &Path, rows: &[AblateRow]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "suite,variant,config,env,method,success_rate,nfes,actions,nfes_per_action,mode_switches"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            r.suite,
            r.variant,
            r.config_hash,
            r.report.env_id,
            r.report.method,
            r.report.success_rate,
            r.report.nfes,
            r.report.actions,
            r.report.nfes_per_action(),
            r.report.mean_mode_switches
        )?;
    }
    f.flush()?;
    Ok(())
}
