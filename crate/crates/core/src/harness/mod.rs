//! Experiment harness: run configs, checkpoints, evaluation, the
//! multi-modality probe, and ablation suites.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod probe;

pub use ablate::{ablate, write_ablate_csv, AblateRow, Suite};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{InitKind, Method, RunConfig};
pub use eval::{
    checkpoint_path, episode_seed, evaluate, mode_switch_count, train_or_load, write_eval_csv,
    EvalReport, SeedReport,
};
pub use probe::{mode_probe, probe_from_samples, write_hist_csv, write_probe_csv, ProbeReport};
