//! Van der Pol (α = 5) emulator over six relaxation cycles, all three modes.
//!
//! cargo run --release --example van_der_pol_emulation

use dynemu::prelude::*;

fn main() -> dynemu::Result<()> {
    let sys = DynamicalSystem::van_der_pol(VAN_DER_POL_ALPHA);
    let tol = Tolerance::default();
    let bbox = estimate_bounds(&sys, &[1.0, 1.0], 100.0, 0.05, 0.01, tol)?;
    let emu = FlowMapEmulator::build(&sys, &bbox, 24, 0.01, KernelFamily::SquaredExponential, 1)?;
    println!("LOO MSE x1 {:.2e}, x2 {:.2e}", emu.loo_mse(0)?, emu.loo_mse(1)?);

    let x0 = [1.0, 1.0];
    let steps = 6000;
    let truth = simulate(&sys, &x0, 0.01, steps, tol)?;
    for mode in [PropagationMode::PlugIn, PropagationMode::UncorrelatedMc, PropagationMode::CorrelatedMc] {
        let traj = emu.rollout(&x0, steps, &PropagationConfig::new(mode, 1000, 3)?)?;
        let h = horizon(&traj)?;
        let err = error_trace(&traj, &truth)?;
        let first_miss = (0..=steps).position(|k| err.iter().any(|e| e[k] >= 1.0));
        let amp = traj.mean_trace(0).iter().skip(4000).map(|v| v.abs()).fold(0.0, f64::max);
        println!(
            "{:<13} horizon t = {:6.2}  first |err| >= 1 at t = {:?}  late amplitude {:.3}",
            mode.name(),
            h.horizon,
            first_miss.map(|k| k as f64 * 0.01),
            amp
        );
    }
    Ok(())
}
