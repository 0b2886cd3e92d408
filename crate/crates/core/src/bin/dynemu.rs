use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynemu::config::ExperimentConfig;
use dynemu::experiment;
use dynemu::propagate::PropagationMode;
use dynemu::EmuError;

#[derive(Parser)]
#[command(name = "dynemu", version, about = "Gaussian-process flow-map emulation of dynamical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the true system (truth.csv)
    Simulate(Common),
    /// Design, training runs and fits (training.csv, emulator.json)
    Build(Common),
    /// Predict from an existing archive (trajectory.csv)
    Rollout(Common),
    /// Horizon, coverage and LOO from existing artifacts (report.json)
    Analyze(Common),
    /// All four stages in order
    Run(Common),
    /// One run per random initial condition from the [batch] section
    Batch(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment TOML (see configs/)
    #[arg(long)]
    config: PathBuf,
    /// Base seed: design = s, fit = s+1, rollout = s+2, batch = s+3
    #[arg(long)]
    seed: Option<u64>,
    /// plugin, uncorrelated or correlated
    #[arg(long)]
    mode: Option<PropagationMode>,
    /// Output directory, overriding [output].dir
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, EmuError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.override_seed(s);
        }
        if let Some(m) = self.mode {
            cfg.rollout.mode = m;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), EmuError> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.load()?;
            experiment::simulate_stage(&cfg, &cfg.output.dir)?;
        }
        Command::Build(c) => {
            let cfg = c.load()?;
            let emu = experiment::build_stage(&cfg, &cfg.output.dir)?;
            for l in 0..emu.dim() {
                if let Ok(v) = emu.loo_mse(l) {
                    println!("LOO MSE x{}: {v:.3e}", l + 1);
                }
            }
        }
        Command::Rollout(c) => {
            let cfg = c.load()?;
            experiment::rollout_stage(&cfg, &cfg.output.dir)?;
        }
        Command::Analyze(c) => {
            let cfg = c.load()?;
            let r = experiment::analyze_stage(&cfg, &cfg.output.dir)?;
            println!("horizon t = {}", r.horizon.horizon);
        }
        Command::Run(c) => {
            let r = experiment::run_experiment(&c.load()?)?;
            println!("horizon t = {}", r.horizon.horizon);
        }
        Command::Batch(c) => {
            for r in experiment::run_batch(&c.load()?)? {
                println!("{:?}: horizon t = {}", r.initial, r.horizon.horizon);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
