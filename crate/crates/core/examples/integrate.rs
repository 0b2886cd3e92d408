//! Reference trajectories from the adaptive integrator.
//!
//! cargo run --example integrate

use dynemu::prelude::*;

fn main() -> dynemu::Result<()> {
    let tol = Tolerance::default();

    let lorenz = DynamicalSystem::lorenz(LORENZ_A, LORENZ_B, LORENZ_C);
    let traj = simulate(&lorenz, &[1.0, 1.0, 1.0], 0.01, 2000, tol)?;
    for k in (0..=2000).step_by(400) {
        let x = &traj[k];
        println!("lorenz t = {:5.2}  ({:8.3}, {:8.3}, {:8.3})", k as f64 * 0.01, x[0], x[1], x[2]);
    }

    let vdp = DynamicalSystem::van_der_pol(VAN_DER_POL_ALPHA);
    let traj = simulate(&vdp, &[1.0, 1.0], 0.01, 6000, tol)?;
    let amp = traj.iter().map(|x| x[0].abs()).fold(0.0, f64::max);
    println!("van der pol: max |x1| over t in [0, 60] = {amp:.4}");

    // one flow-map sample, at two tolerances
    let coarse = integrate_step(&lorenz, &[1.0, 1.0, 1.0], 0.01, tol)?;
    let fine = integrate_step(&lorenz, &[1.0, 1.0, 1.0], 0.01, Tolerance { abs: 5e-11, rel: 5e-9 })?;
    let diff = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("one step at halved tolerance moves by {diff:.1e}");
    Ok(())
}
