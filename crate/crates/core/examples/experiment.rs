//! The file-based pipeline the CLI drives: config in, CSV and JSON artifacts out.
//!
//! cargo run --release --example experiment [out-dir]

use dynemu::config::{BoundsConfig, ExperimentConfig};
use dynemu::emulator::FlowMapEmulator;
use dynemu::experiment::{read_trajectory, run_experiment, Artifacts};

fn main() -> dynemu::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "out/example".into());
    let mut cfg = ExperimentConfig::van_der_pol();
    cfg.bounds = BoundsConfig::Explicit { lower: vec![-2.5, -8.0], upper: vec![2.5, 8.0] };
    cfg.rollout.steps = 500;
    cfg.output.dir = dir.into();
    println!("{}", cfg.to_toml()?);

    let report = run_experiment(&cfg)?;
    println!("horizon t = {:.2}, coverage {:.3}", report.horizon.horizon, report.coverage.overall);

    let files = Artifacts::new(cfg.output.dir.clone());
    let emu = FlowMapEmulator::load(&files.emulator())?;
    let table = read_trajectory(&files.trajectory())?;
    println!("reloaded emulator with {} design points; trajectory has {} rows", emu.design().nrows(), table.t.len());
    Ok(())
}
