use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use ve_wane::harness::{
    emit_table, render_report, run_estimate, run_mc_study, run_simulate, write_replications, RunConfig, RunMode,
    TableFormat, WeightSelection,
};

#[derive(Parser)]
#[command(
    name = "ve-wane",
    version,
    about = "Waning vaccine efficacy from blinded and unblinded trial follow-up"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset from a preset and write it as CSV.
    Simulate(Common),
    /// Estimate θ and VE on one dataset.
    Estimate(Common),
    /// Run a Monte Carlo study and write summary tables.
    McStudy(Common),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// unit, estimated or both.
    #[arg(long)]
    weights: Option<WeightSelection>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self, mode: RunMode) -> Result<RunConfig> {
        let mut cfg =
            RunConfig::from_path(&self.config).with_context(|| format!("reading config {}", self.config.display()))?;
        cfg.mode = mode;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.reps {
            cfg.reps = r;
        }
        if let Some(w) = self.weights {
            cfg.weights = w;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.load(RunMode::Simulate)?;
            let path = run_simulate(&cfg)?;
            println!("{}", path.display());
        }
        Command::Estimate(c) => {
            let cfg = c.load(RunMode::Estimate)?;
            let report = run_estimate(&cfg)?;
            print!("{}", render_report(&report));
            info!("results written to {}", cfg.out.display());
        }
        Command::McStudy(c) => {
            let cfg = c.load(RunMode::McStudy)?;
            let study = run_mc_study(&cfg)?;
            for f in [TableFormat::Text, TableFormat::Csv, TableFormat::Json] {
                emit_table(&study.summary, f, &cfg.out)?;
            }
            write_replications(&cfg.out.join("replications.csv"), &study.replications)?;
            print!("{}", ve_wane::harness::render_text(&study.summary));
            info!("summaries written to {}", cfg.out.display());
        }
    }
    Ok(())
}
