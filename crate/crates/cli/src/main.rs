use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rnrdp_core::env::demos::{gen_demos, save_demos};
use rnrdp_core::env::make_env;
use rnrdp_core::harness::{
    ablate, evaluate, load_checkpoint, mode_probe, train_or_load, write_ablate_csv,
    write_eval_csv, write_hist_csv, write_probe_csv, Checkpoint, Method, RunConfig, Suite,
};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "rnrdp", version, about = "Noise-relaying diffusion policy experiments")]
struct Cli {
    /// Run configuration file (flat key = value text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the relevant seed (demo seed for gen-demos, train seed
    /// for train, first eval seed otherwise).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for checkpoints and CSVs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted-expert demonstrations and save them.
    GenDemos,
    /// Train a policy (or reuse the cached checkpoint) and report its path.
    Train,
    /// Evaluate a saved checkpoint across seeds and episodes.
    Eval {
        /// Checkpoint produced by `train`.
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Run one ablation suite.
    Ablate {
        #[arg(long)]
        suite: String,
        /// Buffer capacities for the capacity suite, comma separated.
        #[arg(long, default_value = "4,8,16")]
        grid: String,
    },
    /// Sample first actions at a fixed state and test for bimodality.
    ProbeModes {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Evaluate the diffusion-policy baseline at T_a in {1,2,4,8}.
    SweepHorizon,
}

fn load_config(cli: &Cli, default_env: &str) -> anyhow::Result<RunConfig> {
    match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            Ok(RunConfig::parse(&text)?)
        }
        None => Ok(RunConfig::defaults(default_env)),
    }
}

fn adopt_eval_config(ckpt: &mut Checkpoint, cli: &Cli) -> anyhow::Result<()> {
    if cli.config.is_some() {
        let cfg = load_config(cli, &ckpt.config.env_id)?;
        if cfg.train_text() != ckpt.config.train_text() {
            bail!("config does not match the checkpoint's training config");
        }
        ckpt.config = cfg;
    }
    if let Some(seed) = cli.seed {
        ckpt.config.seeds = vec![seed];
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::GenDemos => {
            let mut cfg = load_config(cli, "bimodal_reach")?;
            if let Some(seed) = cli.seed {
                cfg.demo_seed = seed;
            }
            let ds = gen_demos(&cfg.env_id, cfg.demos, cfg.demo_seed)?;
            let path = cli
                .out
                .join(format!("demos_{}_{}.bin", cfg.env_id, cfg.demo_seed));
            save_demos(&ds, &path)?;
            println!("{}", path.display());
        }
        Command::Train => {
            let mut cfg = load_config(cli, "bimodal_reach")?;
            if let Some(seed) = cli.seed {
                cfg.train_seed = seed;
            }
            train_or_load(&cfg, &cli.out)?;
            println!(
                "{}",
                rnrdp_core::harness::checkpoint_path(&cli.out, &cfg).display()
            );
        }
        Command::Eval { ckpt } => {
            let mut ckpt = load_checkpoint(ckpt)?;
            adopt_eval_config(&mut ckpt, cli)?;
            let report = evaluate(&ckpt)?;
            let path = cli
                .out
                .join(format!("eval_{}.csv", ckpt.config.config_hash()));
            write_eval_csv(&path, &report)?;
            println!(
                "{} success_rate={:.3} nfes_per_action={:.3}",
                path.display(),
                report.success_rate,
                report.nfes_per_action()
            );
        }
        Command::Ablate { suite, grid } => {
            let cfg = load_config(cli, "bimodal_reach")?;
            let suite: Suite = suite.parse()?;
            let grid = parse_grid(grid)?;
            let rows = ablate(suite, &cfg, &grid, &cli.out)?;
            let path = cli
                .out
                .join(format!("ablate_{}_{}.csv", suite, cfg.config_hash()));
            write_ablate_csv(&path, &rows)?;
            println!("{}", path.display());
        }
        Command::ProbeModes { ckpt, samples } => {
            let ckpt = load_checkpoint(ckpt)?;
            let seed = cli.seed.unwrap_or(0);
            // probe at the initial state of a fixed-seed reset
            let mut env = make_env(&ckpt.config.env_id)?;
            let state = env.reset(seed);
            drop(env);
            let report = mode_probe(&ckpt, &state, *samples, seed)?;
            let hash = ckpt.config.config_hash();
            let proj = cli.out.join(format!("probe_{}.csv", hash));
            let hist = cli.out.join(format!("probe_{}_hist.csv", hash));
            write_probe_csv(&proj, &report)?;
            write_hist_csv(&hist, &report)?;
            println!(
                "{} bimodal={} masses={:.3},{:.3}",
                proj.display(),
                report.bimodal,
                report.masses[0],
                report.masses[1]
            );
        }
        Command::SweepHorizon => {
            let base = load_config(cli, "bimodal_reach")?;
            let path = cli
                .out
                .join(format!("sweep_horizon_{}.csv", base.config_hash()));
            sweep_horizon(&base, &cli.out, &path)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn parse_grid(grid: &str) -> anyhow::Result<Vec<usize>> {
    grid.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .with_context(|| format!("bad grid entry {:?}", p))
        })
        .collect()
}

fn sweep_horizon(base: &RunConfig, cache_dir: &Path, csv: &Path) -> anyhow::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(csv)?);
    writeln!(
        f,
        "t_a,method,env,success_rate,nfes,actions,nfes_per_action,mode_switches"
    )?;
    for t_a in [1usize, 2, 4, 8] {
        let mut cfg = base.clone();
        cfg.method = Method::DpDdpm;
        cfg.t_a = t_a.min(cfg.f);
        let ckpt = train_or_load(&cfg, cache_dir)?;
        let report = evaluate(&ckpt)?;
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            cfg.t_a,
            report.method,
            report.env_id,
            report.success_rate,
            report.nfes,
            report.actions,
            report.nfes_per_action(),
            report.mean_mode_switches
        )?;
    }
    f.flush()?;
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {:#}", e);
        std::process::exit(1);
    }
}
