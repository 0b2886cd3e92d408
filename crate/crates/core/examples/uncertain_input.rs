//! Push a Gaussian state through one emulator step in each propagation mode.
//!
//! cargo run --release --example uncertain_input

use dynemu::prelude::*;
use nalgebra::{DMatrix, DVector};

fn main() -> dynemu::Result<()> {
    let sys = DynamicalSystem::van_der_pol(VAN_DER_POL_ALPHA);
    let bbox = BoundingBox::new(vec![-2.5, -8.0], vec![2.5, 8.0])?;
    let emu = FlowMapEmulator::build(&sys, &bbox, 24, 0.01, KernelFamily::SquaredExponential, 1)?;

    let input = StateDistribution::new(DVector::from_vec(vec![1.0, 1.0]), DMatrix::from_diagonal_element(2, 2, 1e-3), 0)?;
    for mode in [PropagationMode::PlugIn, PropagationMode::UncorrelatedMc, PropagationMode::CorrelatedMc] {
        let cfg = PropagationConfig::new(mode, 2000, 3)?;
        let out = emu.step(&input, &cfg)?;
        let c = out.cov();
        println!(
            "{:<13} mean ({:+.5}, {:+.5})  cov [[{:.3e}, {:+.3e}], [{:+.3e}, {:.3e}]]",
            mode.name(),
            out.mean()[0],
            out.mean()[1],
            c[(0, 0)],
            c[(0, 1)],
            c[(1, 0)],
            c[(1, 1)]
        );
    }
    Ok(())
}
