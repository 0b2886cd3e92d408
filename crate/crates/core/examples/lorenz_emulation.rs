//! Lorenz flow-map emulator: build, roll out with uncertainty, find the horizon.
//!
//! cargo run --release --example lorenz_emulation [mode]
//!
//! `mode` is one of plugin, uncorrelated, correlated (default).

use dynemu::analysis::coverage;
use dynemu::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mode: PropagationMode = std::env::args().nth(1).unwrap_or_else(|| "correlated".into()).parse()?;
    let sys = DynamicalSystem::lorenz(LORENZ_A, LORENZ_B, LORENZ_C);
    let tol = Tolerance::default();
    let bbox = estimate_bounds(&sys, &[0.01; 3], 100.0, 0.05, 0.01, tol)?;

    let emu = FlowMapEmulator::build(&sys, &bbox, 36, 0.01, KernelFamily::SquaredExponential, 1)?;
    for l in 0..3 {
        println!("x{} LOO MSE {:.2e}", l + 1, emu.loo_mse(l)?);
    }

    let x0 = [1.0, 1.0, 1.0];
    let steps = 2000;
    let truth = simulate(&sys, &x0, 0.01, steps, tol)?;
    let traj = emu.rollout(&x0, steps, &PropagationConfig::new(mode, 1000, 3)?)?;

    let h = horizon(&traj)?;
    let cov = coverage(&traj, &truth, h.horizon_index)?;
    println!("{} horizon t = {:.2} (per-coordinate change points {:?})", mode.name(), h.horizon, h.change_points);
    println!("2-SD coverage: overall {:.3}, before horizon {:?}", cov.overall, cov.pre_horizon);

    // indexed [coordinate][step]
    let errors = error_trace(&traj, &truth)?;
    for k in (0..=steps).step_by(250) {
        let sd = traj.states[k].sd();
        println!(
            "t = {:5.2}  |err| ({:7.3}, {:7.3}, {:7.3})  sd ({:.1e}, {:.1e}, {:.1e})",
            k as f64 * 0.01,
            errors[0][k],
            errors[1][k],
            errors[2][k],
            sd[0],
            sd[1],
            sd[2]
        );
    }
    Ok(())
}
